/* tslint:disable */
/* eslint-disable */

/**
 * In-domain and general-domain language models trained from pasted text,
 * one sentence per line.
 */
export class DomainScorer {
    free(): void;
    [Symbol.dispose](): void;
    constructor(in_domain: string, out_domain: string, order: number);
    score(pool: string): string;
}

export function segment(values: Float64Array, frame_rate_hz: number, p_on: number, p_off: number, t_dur_s: number, m_dur_s: number, m_int_s: number): string;

export function wav_activation(bytes: Uint8Array): Float64Array;

export function wav_frame_rate(): number;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_domainscorer_free: (a: number, b: number) => void;
    readonly domainscorer_new: (a: number, b: number, c: number, d: number, e: number) => [number, number, number];
    readonly domainscorer_score: (a: number, b: number, c: number) => [number, number];
    readonly segment: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number) => [number, number, number, number];
    readonly wav_activation: (a: number, b: number) => [number, number, number, number];
    readonly wav_frame_rate: () => number;
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
