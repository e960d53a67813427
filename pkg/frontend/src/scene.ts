// Geometry for the pair view: two point clouds, match lines, spline
// overlay. Builders are pure functions of ViewState so they can be tested
// without a GL context; PairScene owns the three.js objects.

import * as THREE from "three";

import type { Detection, Frame, SeamFrame } from "./api";
import { COLORS, ViewState, type ViewMode } from "./state";

export interface PairGeometry {
    /** matched prev-frame nuclei, drawn solid red */
    prev: Float32Array,
    /** curr-frame nuclei covered by the prediction, solid blue */
    curr: Float32Array,
    /** prev-frame tracks the prediction left unmatched, drawn hollow */
    dimmed: Float32Array,
    /** curr-frame detections no track claimed (candidates for new names) */
    fresh: Float32Array,
    /** match line endpoints, two xyz triplets per segment */
    segments: Float32Array,
    /** polyline through the seam midline of each frame, prev then curr */
    splines: Float32Array[],
    /** world-x shift applied to the curr cloud (side-by-side only) */
    currOffset: number,
}

/** Render position of a detection in the requested space. */
export function detectionPoint(d: Detection, mode: ViewMode): [number, number, number] {
    if (mode === "raw-3d") {
        return [d.x_um, d.y_um, d.z_um];
    }
    if (d.s_um === undefined || d.u_um === undefined || d.v_um === undefined) {
        throw new Error("detection has no straightened coordinates");
    }
    return [d.s_um, d.u_um, d.v_um];
}

function pack(points: [number, number, number][]): Float32Array {
    const out = new Float32Array(points.length * 3);
    points.forEach((p, i) => out.set(p, i * 3));
    return out;
}

/** Midline polyline: seam pair midpoints in anterior-to-posterior order. */
export function splinePolyline(seam: SeamFrame, mode: ViewMode,
                               samples = 64): Float32Array {
    const mids = seam.pairs.map((p): THREE.Vector3 => new THREE.Vector3(
        (p.left[0] + p.right[0]) / 2,
        (p.left[1] + p.right[1]) / 2,
        (p.left[2] + p.right[2]) / 2,
    ));
    if (mode !== "raw-3d") {
        // straightened view: the midline is the s axis by construction
        return pack([[0, 0, 0], [1, 0, 0]]);
    }
    const curve = new THREE.CatmullRomCurve3(mids);
    return pack(curve.getPoints(samples).map((v) => [v.x, v.y, v.z]));
}

function cloudExtent(frames: (Frame | null)[], mode: ViewMode): number {
    let lo = Infinity;
    let hi = -Infinity;
    for (const fr of frames) {
        for (const d of fr?.detections ?? []) {
            const x = detectionPoint(d, mode)[0];
            lo = Math.min(lo, x);
            hi = Math.max(hi, x);
        }
    }
    return hi > lo ? hi - lo : 0;
}

/**
 * Build all render buffers for the active pair. Without a fresh prediction
 * there are no match lines and no dimmed/fresh highlighting; everything
 * else still renders so editing stays possible.
 */
export function buildPairGeometry(view: ViewState): PairGeometry {
    const mode = view.mode;
    const space: ViewMode = mode === "side-by-side" ? "straightened-3d" : mode;
    const prevFr = view.prevFrame;
    const currFr = view.currFrame;
    const pred = view.prediction;

    const currOffset = mode === "side-by-side"
        ? cloudExtent([prevFr, currFr], space) * 1.2
        : 0;
    const shift = (p: [number, number, number]): [number, number, number] =>
        [p[0] + currOffset, p[1], p[2]];

    const dimmedIds = new Set(pred?.dimmed ?? []);
    const freshIdx = new Set(pred?.new ?? []);

    const prevPts: [number, number, number][] = [];
    const dimPts: [number, number, number][] = [];
    for (const d of prevFr?.detections ?? []) {
        const p = detectionPoint(d, space);
        (d.id && dimmedIds.has(d.id) ? dimPts : prevPts).push(p);
    }

    const currPts: [number, number, number][] = [];
    const freshPts: [number, number, number][] = [];
    for (const d of currFr?.detections ?? []) {
        const p = shift(detectionPoint(d, space));
        (freshIdx.has(d.index) ? freshPts : currPts).push(p);
    }

    const segs: [number, number, number][] = [];
    if (pred && prevFr && currFr) {
        for (const m of pred.matches) {
            const a = view.detectionById(prevFr.index, m.track_id);
            const b = currFr.detections[m.detection_index];
            if (a && b) {
                segs.push(detectionPoint(a, space));
                segs.push(shift(detectionPoint(b, space)));
            }
        }
    }

    const splines: Float32Array[] = [];
    const seam = view.server.seam;
    if (seam && view.activePair) {
        const [tp, tc] = view.activePair;
        splines.push(splinePolyline(seam[tp], space));
        const currSpline = splinePolyline(seam[tc], space);
        if (currOffset) {
            for (let i = 0; i < currSpline.length; i += 3) {
                currSpline[i] += currOffset;
            }
        }
        splines.push(currSpline);
    }

    return {
        prev: pack(prevPts),
        curr: pack(currPts),
        dimmed: pack(dimPts),
        fresh: pack(freshPts),
        segments: pack(segs),
        splines,
        currOffset,
    };
}

function pointsObject(color: number, size: number, hollow = false): THREE.Points {
    const mat = new THREE.PointsMaterial({ color, size, sizeAttenuation: true });
    if (hollow) {
        // dimmed tracks render as rings: a radial alpha mask on the sprite
        const c = document.createElement("canvas");
        c.width = c.height = 64;
        const g = c.getContext("2d")!;
        g.strokeStyle = "#fff";
        g.lineWidth = 10;
        g.beginPath();
        g.arc(32, 32, 24, 0, Math.PI * 2);
        g.stroke();
        mat.map = new THREE.CanvasTexture(c);
        mat.alphaMap = mat.map;
        mat.transparent = true;
    }
    return new THREE.Points(new THREE.BufferGeometry(), mat);
}

function setPositions(obj: THREE.Points | THREE.LineSegments | THREE.Line,
                      data: Float32Array): void {
    obj.geometry.setAttribute("position", new THREE.BufferAttribute(data, 3));
    obj.geometry.computeBoundingSphere();
    obj.visible = data.length > 0;
}

/** Owns the three.js objects for one pair view in a caller-provided scene. */
export class PairScene {
    private prev = pointsObject(COLORS.prev, 2.0);
    private curr = pointsObject(COLORS.curr, 2.0);
    private dimmed = pointsObject(COLORS.dimmed, 2.6, true);
    private fresh = pointsObject(COLORS.fresh, 2.6);
    private lines = new THREE.LineSegments(
        new THREE.BufferGeometry(),
        new THREE.LineBasicMaterial({ color: COLORS.match }));
    private splines: THREE.Line[] = [];

    constructor(private scene: THREE.Scene) {
        scene.add(this.prev, this.curr, this.dimmed, this.fresh, this.lines);
    }

    /** Re-render from the cached view; no fetching happens here. */
    update(view: ViewState): void {
        const geo = buildPairGeometry(view);
        setPositions(this.prev, geo.prev);
        setPositions(this.curr, geo.curr);
        setPositions(this.dimmed, geo.dimmed);
        setPositions(this.fresh, geo.fresh);
        setPositions(this.lines, geo.segments);
        for (const s of this.splines) {
            this.scene.remove(s);
        }
        this.splines = geo.splines.map((data) => {
            const line = new THREE.Line(
                new THREE.BufferGeometry(),
                new THREE.LineBasicMaterial({ color: COLORS.spline }));
            setPositions(line, data);
            this.scene.add(line);
            return line;
        });
    }
}
