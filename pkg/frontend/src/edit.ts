// Detection editing intents. Each tool emits exactly one edit call and
// applies the server's authoritative delta; the view never guesses.

import { ApiError, ServiceClient, type EditRequest, type SessionState, type Vec3 } from "./api";
import { ViewState } from "./state";
import { detectionPoint } from "./scene";

/**
 * Place a clicked ray in 3D: intersect it with the camera-facing plane
 * through the nucleus nearest to the ray. A 2D pointer underdetermines a
 * 3D point, so depth is borrowed from existing structure.
 */
export function placeOnCameraPlane(origin: Vec3, dir: Vec3,
                                   points: Vec3[]): Vec3 | null {
    if (points.length === 0) {
        return null;
    }
    const norm = Math.hypot(...dir);
    const d: Vec3 = [dir[0] / norm, dir[1] / norm, dir[2] / norm];
    let best: Vec3 = points[0];
    let bestDist = Infinity;
    for (const p of points) {
        const rel: Vec3 = [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]];
        const t = rel[0] * d[0] + rel[1] * d[1] + rel[2] * d[2];
        const perp = Math.hypot(rel[0] - t * d[0], rel[1] - t * d[1],
                                rel[2] - t * d[2]);
        if (perp < bestDist) {
            bestDist = perp;
            best = p;
        }
    }
    // plane through `best` with the view direction as its normal
    const tPlane = (best[0] - origin[0]) * d[0] + (best[1] - origin[1]) * d[1]
        + (best[2] - origin[2]) * d[2];
    return [origin[0] + tPlane * d[0], origin[1] + tPlane * d[1],
            origin[2] + tPlane * d[2]];
}

/** Fallback when the frame is empty: user supplies the depth directly. */
export function placeAtDepth(origin: Vec3, dir: Vec3, z: number): Vec3 | null {
    if (dir[2] === 0) {
        return null;
    }
    const t = (z - origin[2]) / dir[2];
    if (t <= 0) {
        return null;
    }
    return [origin[0] + t * dir[0], origin[1] + t * dir[1], z];
}

export class EditTools {
    /** set when a conflict was resolved by reload; caller may notify */
    lastConflictReplayed = false;

    constructor(
        private client: ServiceClient,
        private view: ViewState,
    ) { }

    /**
     * One edit round-trip. On a revision conflict the state is reloaded and
     * the intent replayed once; a second conflict is surfaced to the caller.
     */
    private async send(frame: number, req: EditRequest): Promise<void> {
        this.lastConflictReplayed = false;
        try {
            const resp = await this.client.edit(
                this.view.sessionId, frame, this.view.revision, req);
            this.view.applyEdit(resp);
        } catch (e) {
            if (!(e instanceof ApiError) || !e.isConflict) {
                throw e;
            }
            const fresh = await this.client.getState(this.view.sessionId);
            this.view.applyServer(fresh as SessionState);
            const resp = await this.client.edit(
                this.view.sessionId, frame, this.view.revision, req);
            this.view.applyEdit(resp);
            this.lastConflictReplayed = true;
        }
    }

    add(frame: number, position: Vec3, id?: string): Promise<void> {
        return this.send(frame, { action: "add", position, id: id ?? null });
    }

    /** Click-to-add: resolve the pointer ray to a 3D point first. */
    addAtRay(frame: number, origin: Vec3, dir: Vec3,
             fallbackZ?: number): Promise<void> {
        const pts = this.view.frame(frame).detections
            .map((d) => detectionPoint(d, "raw-3d"));
        const pos = placeOnCameraPlane(origin, dir, pts)
            ?? (fallbackZ !== undefined ? placeAtDepth(origin, dir, fallbackZ) : null);
        if (!pos) {
            return Promise.reject(new Error("cannot place point: empty frame "
                + "and no depth given"));
        }
        return this.add(frame, pos);
    }

    remove(frame: number, index: number): Promise<void> {
        return this.send(frame, { action: "remove", index });
    }

    move(frame: number, index: number, position: Vec3): Promise<void> {
        return this.send(frame, { action: "move", index, position });
    }

    split(frame: number, index: number, a: Vec3, b: Vec3): Promise<void> {
        return this.send(frame, {
            action: "split", index, position_a: a, position_b: b,
        });
    }

    name(frame: number, index: number, id: string | null): Promise<void> {
        return this.send(frame, { action: "name", index, id });
    }

    undo(): Promise<void> {
        return this.send(0, { action: "undo" });
    }

    redo(): Promise<void> {
        return this.send(0, { action: "redo" });
    }
}
