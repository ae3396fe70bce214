/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_analysis_free: (a: number, b: number) => void;
export const __wbg_toysinger_free: (a: number, b: number) => void;
export const analysis_audio: (a: number) => [number, number];
export const analysis_frames: (a: number) => number;
export const analysis_median_pitch: (a: number) => number;
export const analysis_mel: (a: number) => [number, number];
export const analysis_pitch: (a: number) => [number, number];
export const analyze_tone: (a: number, b: number) => [number, number, number];
export const resynthesize_tone: (a: number, b: number, c: number) => [number, number, number];
export const toysinger_example: (a: number, b: number) => [number, number];
export const toysinger_new: (a: bigint, b: number) => [number, number, number];
export const toysinger_sample: (a: number, b: number, c: bigint) => [number, number, number, number];
export const toysinger_steps: (a: number) => bigint;
export const toysinger_tau: (a: number) => number;
export const toysinger_train: (a: number, b: number) => [number, number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_start: () => void;
