// Hand-built server payloads for the unit tests: three frames of three
// nuclei drifting +1 um in x per frame, frame 0 named.

import type { Detection, Prediction, SessionState } from "../src/api";

export function det(index: number, x: number, y: number, z: number,
                    id: string | null = null,
                    extra: Partial<Detection> = {}): Detection {
    return { index, x_um: x, y_um: y, z_um: z, id, origin: "detector", ...extra };
}

export function makeState(patch: Partial<SessionState> = {}): SessionState {
    const frames = [0, 1, 2].map((t) => ({
        index: t,
        committed: false,
        detections: [0, 1, 2].map((i) =>
            det(i, 10 * i + t, 0, 0, t === 0 ? `N${i}` : null)),
    }));
    return {
        session_id: "s-test",
        revision: 0,
        frame_count: 3,
        coordinate_space: "raw",
        active_pair: [0, 1],
        committed_frames: [],
        frames,
        seam: null,
        constraints: { pins: {}, forbids: [] },
        prediction: null,
        tracks: {},
        undo_depth: 0,
        redo_depth: 0,
        ...patch,
    };
}

export function identityPrediction(revision = 0): Prediction {
    return {
        revision,
        pair: [0, 1],
        row_ids: ["N0", "N1", "N2"],
        cols: [0, 1, 2],
        matches: [0, 1, 2].map((i) => ({
            track_id: `N${i}`, detection_index: i, distance: 1.0,
        })),
        dimmed: [],
        new: [],
        total_cost: 3.0,
    };
}

/** Same cloud in both frames, straightened coordinates attached. */
export function straightenedState(): SessionState {
    const frames = [0, 1].map((t) => ({
        index: t,
        committed: false,
        detections: [0, 1, 2].map((i) => det(
            i, 10 * i, 5, 5, t === 0 ? `N${i}` : null,
            { s_um: 20 * i, u_um: 1, v_um: -1, inside_body: true })),
    }));
    return makeState({
        coordinate_space: "straightened",
        frame_count: 2,
        frames,
        seam: [0, 1].map((t) => ({
            frame_index: t,
            pairs: [
                { name: "H0", left: [0, 2, 0], right: [0, -2, 0] },
                { name: "V1", left: [10, 2, 0], right: [10, -2, 0] },
                { name: "T", left: [20, 2, 0], right: [20, -2, 0] },
            ],
        })),
    });
}
