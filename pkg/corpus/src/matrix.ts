/** Fixture build matrix: which sources build at which optimization levels.
 *
 * Every fixture links with -nostartfiles plus a minimal annotated start stub,
 * so the unstripped twin's nonzero-size function symbols are exactly the
 * ground truth (no runtime scaffolding with missing or zero-size symbols).
 */

export type Opt = 'O2' | 'O3' | 'Os';

export interface Fixture {
  name: string;
  sources: string[];
  opts: Opt[];
  extraFlags?: string[];
}

export const COMMON_FLAGS = ['-nostartfiles'];

export const START_STUB = 'start.S';

export const FIXTURES: Fixture[] = [
  { name: 'plain', sources: ['plain.c'], opts: ['O2', 'O3', 'Os'] },
  { name: 'switch', sources: ['switch.c'], opts: ['O2', 'O3', 'Os'] },
  {
    name: 'switch_abs',
    sources: ['switch.c'],
    opts: ['O2'],
    extraFlags: ['-no-pie', '-fno-pic'],
  },
  { name: 'noreturn_chain', sources: ['noreturn_chain.c'], opts: ['O2', 'Os'] },
  { name: 'error_calls', sources: ['error_calls.c'], opts: ['O2'] },
  {
    name: 'tailcall',
    sources: ['tailcall.c'],
    opts: ['O2'],
    extraFlags: ['-foptimize-sibling-calls'],
  },
  { name: 'split_fde', sources: ['split_fde.S', 'split_fde_main.c'], opts: ['O2'] },
  { name: 'split_rbp', sources: ['split_rbp.S', 'split_rbp_main.c'], opts: ['O2'] },
  { name: 'no_fde', sources: ['no_fde.S', 'no_fde_main.c'], opts: ['O2'] },
  { name: 'ptr_only', sources: ['ptr_only.S', 'ptr_only_main.c'], opts: ['O2'] },
  {
    name: 'misaligned_fde',
    sources: ['misaligned_fde.S', 'misaligned_fde_main.c'],
    opts: ['O2'],
  },
  { name: 'regalias', sources: ['regalias.S', 'regalias_main.c'], opts: ['O2'] },
];

/** The behaviors the corpus must cover, each by at least one fixture. */
export const REQUIRED_CATEGORIES: Record<string, string> = {
  plain_c: 'plain',
  switch_jump_table_pic: 'switch',
  switch_jump_table_absolute: 'switch_abs',
  noreturn_chain: 'noreturn_chain',
  conditional_error_calls: 'error_calls',
  tail_call: 'tailcall',
  split_function_two_frame_records: 'split_fde',
  assembly_no_frame_record_direct_call: 'no_fde',
  assembly_pointer_array_only: 'ptr_only',
  misaligned_frame_record: 'misaligned_fde',
  register_alias_bound_check: 'regalias',
};
