/* tslint:disable */
/* eslint-disable */

export class Analysis {
    private constructor();
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Audio at 22050 Hz.
     */
    readonly audio: Float32Array;
    readonly frames: number;
    /**
     * Median of the voiced pitch values, 0 if none.
     */
    readonly median_pitch: number;
    /**
     * Normalised mel, 80 values per frame.
     */
    readonly mel: Float32Array;
    /**
     * Detected pitch per frame in Hz, 0 where unvoiced.
     */
    readonly pitch: Float32Array;
}

/**
 * A free singer trained in the page on pseudo-singing clips.
 */
export class ToySinger {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * One training clip, 80 values per frame.
     */
    example(index: number): Float32Array;
    constructor(seed: bigint, width: number);
    /**
     * A generated mel of `frames` frames, 80 values per frame.
     */
    sample(frames: number, seed: bigint): Float32Array;
    /**
     * Runs `steps` training steps; returns the convergence metric of the
     * last one.
     */
    train(steps: number): number;
    readonly steps: bigint;
    readonly tau: number;
}

/**
 * Mel spectrogram and pitch contour of a synthetic tone.
 */
export function analyze_tone(freq: number, seconds: number): Analysis;

/**
 * Inverts the tone's mel spectrogram with Griffin-Lim and re-analyses the
 * result, so the page can compare pitch before and after.
 */
export function resynthesize_tone(freq: number, seconds: number, iters: number): Analysis;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_analysis_free: (a: number, b: number) => void;
    readonly __wbg_toysinger_free: (a: number, b: number) => void;
    readonly analysis_audio: (a: number) => [number, number];
    readonly analysis_frames: (a: number) => number;
    readonly analysis_median_pitch: (a: number) => number;
    readonly analysis_mel: (a: number) => [number, number];
    readonly analysis_pitch: (a: number) => [number, number];
    readonly analyze_tone: (a: number, b: number) => [number, number, number];
    readonly resynthesize_tone: (a: number, b: number, c: number) => [number, number, number];
    readonly toysinger_example: (a: number, b: number) => [number, number];
    readonly toysinger_new: (a: bigint, b: number) => [number, number, number];
    readonly toysinger_sample: (a: number, b: number, c: bigint) => [number, number, number, number];
    readonly toysinger_steps: (a: number) => bigint;
    readonly toysinger_tau: (a: number) => number;
    readonly toysinger_train: (a: number, b: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __externref_table_dealloc: (a: number) => void;
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
