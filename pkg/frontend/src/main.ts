// Page wiring: WebGL viewport on the left, session controls and the match
// table on the right. All tracking math happens on the server; this file
// only routes intents and re-renders.

import * as THREE from "three";
import { OrbitControls } from "three/addons/controls/OrbitControls.js";

import { ServiceClient, type SessionState } from "./api";
import { EditTools } from "./edit";
import { MatchReview } from "./review";
import { PairScene } from "./scene";
import { ViewState, type ViewMode } from "./state";

const SERVICE = (import.meta as any).env?.VITE_SERVICE_URL
    ?? "http://127.0.0.1:8571";

function el<K extends keyof HTMLElementTagNameMap>(
    tag: K, attrs: Record<string, string> = {}, text = ""): HTMLElementTagNameMap[K] {
    const node = document.createElement(tag);
    for (const [k, v] of Object.entries(attrs)) {
        node.setAttribute(k, v);
    }
    if (text) {
        node.textContent = text;
    }
    return node;
}

class App {
    private client = new ServiceClient(SERVICE);
    private view: ViewState | null = null;
    private tools: EditTools | null = null;
    private review: MatchReview | null = null;

    private renderer = new THREE.WebGLRenderer({ antialias: true });
    private scene = new THREE.Scene();
    private camera = new THREE.PerspectiveCamera(50, 1, 0.1, 5000);
    private controls: OrbitControls;
    private pair: PairScene;

    private status: HTMLElement;
    private table: HTMLElement;
    private modeBar: HTMLElement;

    constructor(root: HTMLElement) {
        const viewport = el("div", { id: "viewport" });
        const panel = el("div", { id: "panel" });
        root.append(viewport, panel);

        this.scene.background = new THREE.Color(0xf4f4f4);
        this.renderer.setSize(viewport.clientWidth || 800,
                              viewport.clientHeight || 600);
        viewport.append(this.renderer.domElement);
        this.camera.position.set(120, 90, 160);
        this.controls = new OrbitControls(this.camera, this.renderer.domElement);
        this.pair = new PairScene(this.scene);

        this.modeBar = el("div", { class: "modes" });
        this.status = el("div", { class: "status" }, "no session");
        this.table = el("div", { class: "matches" });
        panel.append(this.buildSessionForm(), this.modeBar, this.status,
                     this.buildEditBar(), this.table, this.buildCommitBar());

        window.addEventListener("resize", () => this.onResize(viewport));
        this.onResize(viewport);
        this.renderer.setAnimationLoop(() => {
            this.controls.update();
            this.renderer.render(this.scene, this.camera);
        });
        this.pollLoop();
    }

    private onResize(viewport: HTMLElement): void {
        const w = viewport.clientWidth || 800;
        const h = viewport.clientHeight || 600;
        this.camera.aspect = w / h;
        this.camera.updateProjectionMatrix();
        this.renderer.setSize(w, h);
    }

    private buildSessionForm(): HTMLElement {
        const form = el("div", { class: "session-form" });
        const nuc = el("input", { placeholder: "nuclei.csv path" });
        const seam = el("input", { placeholder: "seam.csv path (optional)" });
        const sid = el("input", { placeholder: "or existing session id" });
        const open = el("button", {}, "open");
        open.onclick = async () => {
            try {
                let state: SessionState;
                if (sid.value.trim()) {
                    state = await this.client.getState(sid.value.trim()) as SessionState;
                } else {
                    state = await this.client.createSession({
                        nuclei_csv: nuc.value.trim(),
                        seam_csv: seam.value.trim() || undefined,
                    });
                }
                this.attach(state);
            } catch (e) {
                this.status.textContent = String(e);
            }
        };
        form.append(nuc, seam, sid, open);
        return form;
    }

    private buildEditBar(): HTMLElement {
        const bar = el("div", { class: "edits" });
        const undo = el("button", {}, "undo");
        const redo = el("button", {}, "redo");
        undo.onclick = () => this.guard(() => this.tools!.undo());
        redo.onclick = () => this.guard(() => this.tools!.redo());
        bar.append(undo, redo);
        return bar;
    }

    private buildCommitBar(): HTMLElement {
        const bar = el("div", { class: "commit" });
        const resolve = el("button", {}, "re-solve");
        const commit = el("button", {}, "commit");
        resolve.onclick = () => this.guard(() => this.review!.resolve());
        commit.onclick = () => this.guard(async () => {
            const out = await this.review!.commit();
            if (!out.committed && out.warning) {
                if (window.confirm(out.warning + "\n\ncommit anyway?")) {
                    await this.review!.commit(true);
                }
            }
        });
        bar.append(resolve, commit);
        return bar;
    }

    private attach(state: SessionState): void {
        this.view = ViewState.fromServer(state);
        this.tools = new EditTools(this.client, this.view);
        this.review = new MatchReview(this.client, this.view);
        this.buildModeBar();
        this.redraw();
    }

    private buildModeBar(): void {
        this.modeBar.replaceChildren();
        for (const mode of this.view!.availableModes) {
            const b = el("button", {}, mode);
            b.onclick = () => {
                this.view!.setMode(mode as ViewMode);
                this.redraw(); // cached state only; no refetch on mode toggle
            };
            this.modeBar.append(b);
        }
    }

    private async guard(fn: () => Promise<unknown>): Promise<void> {
        if (!this.view) {
            return;
        }
        try {
            await fn();
        } catch (e) {
            this.status.textContent = String(e);
        }
        this.redraw();
    }

    private redraw(): void {
        if (!this.view) {
            return;
        }
        this.pair.update(this.view);
        const v = this.view;
        this.status.textContent =
            `session ${v.sessionId} rev ${v.revision} `
            + `pair ${v.activePair ? v.activePair.join("-") : "done"}`;
        this.renderTable();
    }

    private renderTable(): void {
        this.table.replaceChildren();
        if (!this.review) {
            return;
        }
        for (const row of this.review.rows()) {
            const line = el("div", { class: row.pinned ? "row pinned" : "row" });
            line.append(
                el("span", {}, `${row.trackId} -> ${row.detectionIndex} `
                    + `(${row.distance.toFixed(2)} um)`));
            const pin = el("button", {}, row.pinned ? "unpin" : "pin");
            pin.onclick = () => this.guard(() => row.pinned
                ? this.review!.unpin(row.trackId)
                : this.review!.pin(row.trackId, row.detectionIndex));
            const forbid = el("button", {}, "forbid");
            forbid.onclick = () => this.guard(
                () => this.review!.forbid(row.trackId, row.detectionIndex));
            line.append(pin, forbid);
            this.table.append(line);
        }
    }

    /** Cheap change detection so another tab's edits show up. */
    private async pollLoop(): Promise<void> {
        for (; ;) {
            await new Promise((r) => setTimeout(r, 2000));
            if (!this.view) {
                continue;
            }
            try {
                const st = await this.client.getState(
                    this.view.sessionId, this.view.revision);
                if (!("unchanged" in st)) {
                    this.view.applyServer(st);
                    this.redraw();
                }
            } catch {
                // transient; next tick retries
            }
        }
    }
}

new App(document.getElementById("app")!);
