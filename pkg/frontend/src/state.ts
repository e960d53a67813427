// ViewState: everything the page renders, derived from the last server
// state plus two local knobs (view mode, selection). Rebuilding it from a
// fresh GET must yield the same view, so nothing render-relevant may live
// anywhere else.

import type {
    Detection,
    EditResponse,
    Frame,
    Prediction,
    SessionState,
} from "./api";

export type ViewMode = "raw-3d" | "straightened-3d" | "side-by-side";

export type Selection =
    | { kind: "detection", frame: number, index: number }
    | { kind: "track", id: string }
    | { kind: "match", trackId: string, detectionIndex: number }
    | null;

// prev = red, curr = blue, match lines black
export const COLORS = {
    prev: 0xcc2222,
    curr: 0x2255cc,
    match: 0x000000,
    dimmed: 0x999999,
    fresh: 0xddaa00,
    spline: 0x11aa66,
    pinned: 0x22aa22,
} as const;

export const DEFAULT_MODE: ViewMode = "raw-3d";

export class ViewState {
    mode: ViewMode = DEFAULT_MODE;
    selection: Selection = null;

    private constructor(private state: SessionState) { }

    static fromServer(state: SessionState): ViewState {
        return new ViewState(state);
    }

    get server(): SessionState {
        return this.state;
    }

    get sessionId(): string {
        return this.state.session_id;
    }

    get revision(): number {
        return this.state.revision;
    }

    get activePair(): [number, number] | null {
        return this.state.active_pair;
    }

    get prediction(): Prediction | null {
        return this.state.prediction;
    }

    frame(t: number): Frame {
        return this.state.frames[t];
    }

    get prevFrame(): Frame | null {
        return this.activePair ? this.frame(this.activePair[0]) : null;
    }

    get currFrame(): Frame | null {
        return this.activePair ? this.frame(this.activePair[1]) : null;
    }

    /** Modes that make sense for this session's data. */
    get availableModes(): ViewMode[] {
        if (this.state.coordinate_space === "straightened") {
            return ["raw-3d", "straightened-3d", "side-by-side"];
        }
        return ["raw-3d"];
    }

    setMode(mode: ViewMode): void {
        if (!this.availableModes.includes(mode)) {
            throw new Error(`view mode ${mode} needs straightened data`);
        }
        this.mode = mode;
    }

    /** Selection only sticks if the entity exists at the current revision. */
    select(sel: Selection): void {
        this.selection = this.validSelection(sel);
    }

    private validSelection(sel: Selection): Selection {
        if (sel === null) {
            return null;
        }
        if (sel.kind === "detection") {
            const fr = this.state.frames[sel.frame];
            return fr && sel.index < fr.detections.length ? sel : null;
        }
        if (sel.kind === "track") {
            return sel.id in this.state.tracks
                || this.rosterIds().has(sel.id) ? sel : null;
        }
        const pred = this.state.prediction;
        const hit = pred && pred.matches.some(
            (m) => m.track_id === sel.trackId
                && m.detection_index === sel.detectionIndex);
        return hit ? sel : null;
    }

    private rosterIds(): Set<string> {
        const ids = new Set<string>(Object.keys(this.state.tracks));
        for (const d of this.state.frames[0].detections) {
            if (d.id) {
                ids.add(d.id);
            }
        }
        return ids;
    }

    /** Swap in a fresh server state; selection is revalidated, mode kept. */
    applyServer(state: SessionState): void {
        this.state = state;
        this.selection = this.validSelection(this.selection);
    }

    /** Apply an edit response's authoritative delta without a refetch. */
    applyEdit(resp: EditResponse): void {
        this.state = {
            ...this.state,
            revision: resp.revision,
            // any mutation invalidates a prediction tied to the old revision
            prediction: null,
            undo_depth: resp.undo_depth,
            redo_depth: resp.redo_depth,
        };
        if (resp.frame) {
            const frames = this.state.frames.slice();
            frames[resp.frame.index] = {
                ...frames[resp.frame.index],
                detections: resp.frame.detections,
            };
            this.state = { ...this.state, frames };
        }
        this.selection = this.validSelection(this.selection);
    }

    applyRevision(revision: number, constraints?: SessionState["constraints"]): void {
        this.state = {
            ...this.state,
            revision,
            prediction: null,
            constraints: constraints ?? this.state.constraints,
        };
    }

    applyPrediction(pred: Prediction): void {
        if (pred.revision !== this.state.revision) {
            return; // stale by the time it arrived; next predict wins
        }
        this.state = { ...this.state, prediction: pred };
    }

    detectionById(frame: number, id: string): Detection | null {
        for (const d of this.state.frames[frame].detections) {
            if (d.id === id) {
                return d;
            }
        }
        return null;
    }

    /** Serializable snapshot used to check reload reconstruction. */
    snapshot(): object {
        return {
            local: { mode: this.mode, selection: this.selection },
            server: this.state,
        };
    }
}
