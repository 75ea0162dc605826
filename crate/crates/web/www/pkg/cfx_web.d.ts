/* tslint:disable */
/* eslint-disable */

/**
 * A generated world plus the checkers that can explain it.
 */
export class Demo {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * `[[class_id, name], ...]` as JSON.
     */
    classes(): string;
    explain(id: string, checker: string, counter_class: string): string;
    hasClassifier(): boolean;
    imageIds(): string[];
    image(id: string): string;
    constructor(n_classes: number, images_per_class: number, seed: number);
    trainClassifier(epochs: number): number;
}

/**
 * Noun phrases of `text` under the shipped bird lexicon.
 */
export function chunk_text(text: string): string[];

/**
 * "This is not a <counter_class> because it does not have <phrase>."
 */
export function counterfactual(counter_class: string, phrase: string): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_demo_free: (a: number, b: number) => void;
    readonly chunk_text: (a: number, b: number) => [number, number];
    readonly counterfactual: (a: number, b: number, c: number, d: number) => [number, number, number, number];
    readonly demo_classes: (a: number) => [number, number];
    readonly demo_explain: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly demo_hasClassifier: (a: number) => number;
    readonly demo_image: (a: number, b: number, c: number) => [number, number, number, number];
    readonly demo_imageIds: (a: number) => [number, number];
    readonly demo_new: (a: number, b: number, c: number) => [number, number, number];
    readonly demo_trainClassifier: (a: number, b: number) => [number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
    readonly __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
    readonly __externref_drop_slice: (a: number, b: number) => void;
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
