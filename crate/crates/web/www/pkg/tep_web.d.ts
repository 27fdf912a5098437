/* tslint:disable */
/* eslint-disable */

export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    frameCount(): number;
    height(): number;
    /**
     * Generates video `index` of a seeded suite and runs both pipelines.
     */
    constructor(suite: string, seed: number, index: number);
    /**
     * RGBA bytes for a canvas `ImageData`.
     */
    render(t: number, ground_truth: boolean, baseline: boolean, enhanced: boolean): Uint8Array;
    setThresholds(iou_threshold: number, confidence_threshold: number): void;
    /**
     * Scores, per-frame J and the decision log, as JSON.
     */
    summary(): string;
    width(): number;
}

/**
 * Gate decision as JSON; see [`gate`].
 */
export function fusionGate(width: number, height: number, sam_box: Uint32Array, aux_box: Uint32Array, confidence: number, iou_threshold: number, confidence_threshold: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly demo_frameCount: (a: number) => number;
    readonly demo_height: (a: number) => number;
    readonly demo_new: (a: number, b: number, c: number, d: number) => [number, number, number];
    readonly demo_render: (a: number, b: number, c: number, d: number, e: number) => [number, number];
    readonly demo_setThresholds: (a: number, b: number, c: number) => [number, number];
    readonly demo_summary: (a: number) => [number, number, number, number];
    readonly demo_width: (a: number) => number;
    readonly fusionGate: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
