import { describe, expect, it } from "vitest";

import { buildPairGeometry, detectionPoint, splinePolyline } from "../src/scene";
import { ViewState } from "../src/state";
import { det, identityPrediction, makeState, straightenedState } from "./fixtures";

function segmentLengths(segs: Float32Array): number[] {
    const out: number[] = [];
    for (let i = 0; i < segs.length; i += 6) {
        out.push(Math.hypot(segs[i] - segs[i + 3], segs[i + 1] - segs[i + 4],
                            segs[i + 2] - segs[i + 5]));
    }
    return out;
}

describe("detectionPoint", () => {
    it("reads raw or straightened coordinates", () => {
        const d = det(0, 1, 2, 3, null, { s_um: 7, u_um: 8, v_um: 9 });
        expect(detectionPoint(d, "raw-3d")).toEqual([1, 2, 3]);
        expect(detectionPoint(d, "straightened-3d")).toEqual([7, 8, 9]);
    });

    it("refuses straightened mode without the coordinates", () => {
        expect(() => detectionPoint(det(0, 1, 2, 3), "straightened-3d"))
            .toThrow(/straightened/);
    });
});

describe("buildPairGeometry", () => {
    it("identity assignment draws near-zero match lines", () => {
        const st = makeState({ prediction: identityPrediction() });
        // make frame 1 coincide with frame 0
        st.frames[1].detections = st.frames[0].detections.map(
            (d) => ({ ...d, id: null }));
        const geo = buildPairGeometry(ViewState.fromServer(st));
        const lens = segmentLengths(geo.segments);
        expect(lens).toHaveLength(3);
        for (const l of lens) {
            expect(l).toBeLessThan(1e-9);
        }
    });

    it("no prediction means no lines and no highlighting", () => {
        const geo = buildPairGeometry(ViewState.fromServer(makeState()));
        expect(geo.segments).toHaveLength(0);
        expect(geo.dimmed).toHaveLength(0);
        expect(geo.fresh).toHaveLength(0);
        expect(geo.prev).toHaveLength(9);
        expect(geo.curr).toHaveLength(9);
    });

    it("dimmed tracks leave the solid bucket", () => {
        const pred = identityPrediction();
        pred.matches = pred.matches.slice(0, 2);
        pred.cols = [0, 1, -1];
        pred.dimmed = ["N2"];
        const geo = buildPairGeometry(
            ViewState.fromServer(makeState({ prediction: pred })));
        expect(geo.prev).toHaveLength(6);
        expect(geo.dimmed).toHaveLength(3);
    });

    it("unclaimed detections are highlighted as fresh", () => {
        const pred = identityPrediction();
        pred.matches = pred.matches.slice(0, 2);
        pred.new = [2];
        const geo = buildPairGeometry(
            ViewState.fromServer(makeState({ prediction: pred })));
        expect(geo.curr).toHaveLength(6);
        expect(geo.fresh).toHaveLength(3);
    });

    it("side-by-side shifts the current frame clear of the previous", () => {
        const v = ViewState.fromServer(straightenedState());
        v.setMode("side-by-side");
        const geo = buildPairGeometry(v);
        expect(geo.currOffset).toBeGreaterThan(0);
        // every curr x sits beyond every prev x
        const prevMax = Math.max(...Array.from(geo.prev).filter((_, i) => i % 3 === 0));
        const currMin = Math.min(...Array.from(geo.curr).filter((_, i) => i % 3 === 0));
        expect(currMin).toBeGreaterThan(prevMax);
    });

    it("mode toggle re-renders from cached state alone", () => {
        const v = ViewState.fromServer(straightenedState());
        const raw = buildPairGeometry(v);
        v.setMode("straightened-3d");
        const str = buildPairGeometry(v);
        expect(raw.prev[0]).toBe(0);   // x_um of N0
        expect(str.prev[3]).toBe(20);  // s_um of N1
    });
});

describe("splinePolyline", () => {
    it("runs through the seam midpoints end to end", () => {
        const seam = straightenedState().seam![0];
        const line = splinePolyline(seam, "raw-3d", 64);
        expect(line.length).toBe(65 * 3);
        expect([line[0], line[1], line[2]]).toEqual([0, 0, 0]);
        const n = line.length;
        expect([line[n - 3], line[n - 2], line[n - 1]]).toEqual([20, 0, 0]);
    });

    it("collapses to the s axis in straightened view", () => {
        const seam = straightenedState().seam![0];
        const line = splinePolyline(seam, "straightened-3d");
        expect(Array.from(line)).toEqual([0, 0, 0, 1, 0, 0]);
    });
});
