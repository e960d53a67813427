// JSON payloads exchanged with the wormtrack session service, plus a thin
// typed client. Field names mirror the wire format exactly.

export type Vec3 = [number, number, number];

export interface Detection {
    index: number,
    x_um: number,
    y_um: number,
    z_um: number,
    id: string | null,
    origin: string,
    s_um?: number,
    u_um?: number,
    v_um?: number,
    inside_body?: boolean,
    clamped?: boolean,
    ambiguous?: boolean,
}

export interface Frame {
    index: number,
    committed: boolean,
    detections: Detection[],
}

export interface SeamPair {
    name: string,
    left: number[],
    right: number[],
}

export interface SeamFrame {
    frame_index: number,
    pairs: SeamPair[],
}

export interface Match {
    track_id: string,
    detection_index: number,
    distance: number,
}

export interface Prediction {
    revision: number,
    pair: [number, number],
    row_ids: string[],
    cols: number[],          // -1 marks a track left unmatched (dimmed)
    matches: Match[],
    dimmed: string[],
    new: number[],
    total_cost: number | null,
}

export interface Constraints {
    pins: Record<string, number>,
    forbids: [string, number][],
}

export interface TrackStep {
    kind: "matched" | "dimmed" | "not_yet_present",
    detection_index: number | null,
}

export interface SessionState {
    session_id: string,
    revision: number,
    frame_count: number,
    coordinate_space: "raw" | "straightened",
    active_pair: [number, number] | null,
    committed_frames: number[],
    frames: Frame[],
    seam: SeamFrame[] | null,
    constraints: Constraints,
    prediction: Prediction | null,
    tracks: Record<string, TrackStep[]>,
    undo_depth: number,
    redo_depth: number,
}

export interface StateUnchanged {
    session_id: string,
    revision: number,
    unchanged: true,
}

export type EditRequest =
    | { action: "add", position: Vec3, id?: string | null }
    | { action: "remove", index: number }
    | { action: "move", index: number, position: Vec3 }
    | { action: "split", index: number, position_a: Vec3, position_b: Vec3 }
    | { action: "name", index: number, id: string | null }
    | { action: "undo" }
    | { action: "redo" };

export interface EditResponse {
    revision: number,
    frame: { index: number, detections: Detection[] } | null,
    undo_depth: number,
    redo_depth: number,
}

export type ConstraintRequest =
    | { action: "pin", track_id: string, detection_index: number }
    | { action: "unpin", track_id: string }
    | { action: "forbid", track_id: string, detection_index: number }
    | { action: "unforbid", track_id: string, detection_index: number }
    | { action: "clear" };

export interface ConstraintResponse {
    revision: number,
    constraints: Constraints,
}

export interface CommitResponse {
    revision: number,
    committed_frame: number,
    active_pair: [number, number] | null,
}

export interface PredictOverrides {
    gate?: number,
    method?: "gnn" | "murty" | "murty_rescore",
    k_best?: number,
    lam?: number,
    graph_kind?: "radius" | "delaunay",
    graph_radius_um?: number,
}

export interface CreateSessionRequest {
    nuclei_csv?: string,
    seam_csv?: string,
    frames?: { x_um: number, y_um: number, z_um: number, id?: string | null }[][],
    seam?: SeamFrame[],
    config?: Record<string, Record<string, unknown>>,
}

/** Error decoded from the service's {"error": {code, message}} body. */
export class ApiError extends Error {
    constructor(
        public status: number,
        public code: string,
        message: string,
    ) {
        super(message);
        this.name = "ApiError";
    }

    get isConflict(): boolean {
        return this.code === "conflict";
    }
}

async function decode<T>(resp: Response): Promise<T> {
    if (resp.ok) {
        return resp.json() as Promise<T>;
    }
    let code = "http_error";
    let message = `${resp.status} ${resp.statusText}`;
    try {
        const body = await resp.json();
        if (body && body.error) {
            code = body.error.code ?? code;
            message = body.error.message ?? message;
        }
    } catch {
        // non-JSON error body; keep the status line
    }
    throw new ApiError(resp.status, code, message);
}

export class ServiceClient {
    constructor(
        private base: string,
        private doFetch: typeof fetch = fetch,
    ) { }

    private post<T>(path: string, body?: unknown): Promise<T> {
        return this.doFetch(this.base + path, {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: body === undefined ? undefined : JSON.stringify(body),
        }).then((r) => decode<T>(r));
    }

    healthz(): Promise<{ ok: boolean }> {
        return this.doFetch(this.base + "/healthz").then((r) => decode(r));
    }

    createSession(req: CreateSessionRequest): Promise<SessionState> {
        return this.post("/sessions", req);
    }

    getState(sid: string, since?: number): Promise<SessionState | StateUnchanged> {
        const q = since === undefined ? "" : `?since=${since}`;
        return this.doFetch(`${this.base}/sessions/${sid}/state${q}`)
            .then((r) => decode(r));
    }

    edit(sid: string, frame: number, revision: number,
         req: EditRequest): Promise<EditResponse> {
        return this.post(`/sessions/${sid}/frames/${frame}/detections:edit`,
                         { revision, ...req });
    }

    predict(sid: string, overrides?: PredictOverrides): Promise<Prediction> {
        return this.post(`/sessions/${sid}/predict`,
                         overrides ? { overrides } : undefined);
    }

    constrain(sid: string, revision: number,
              req: ConstraintRequest): Promise<ConstraintResponse> {
        return this.post(`/sessions/${sid}/constraints`, { revision, ...req });
    }

    commit(sid: string, revision: number, force = false): Promise<CommitResponse> {
        return this.post(`/sessions/${sid}/commit`, { revision, force });
    }

    exportCsv(sid: string): Promise<string> {
        return this.doFetch(`${this.base}/sessions/${sid}/export`).then((r) => {
            if (!r.ok) {
                throw new ApiError(r.status, "http_error", `${r.status} ${r.statusText}`);
            }
            return r.text();
        });
    }
}
