// The five sleep stages, indexed by class number. Classifiers with fewer
// classes simply use a prefix of this list.

export const STAGE_NAMES = ["W", "N1", "N2", "N3", "REM"] as const;

export type StageName = (typeof STAGE_NAMES)[number];

export const STAGE_COLORS: Record<StageName, string> = {
  W: "#e6a23c",
  N1: "#8fbcd4",
  N2: "#4a7fb5",
  N3: "#2b4f81",
  REM: "#7b5ea7",
};

// Hypnogram rows, top to bottom (clinical convention: wake on top, REM between
// wake and light sleep).
export const HYPNOGRAM_ORDER: StageName[] = ["W", "REM", "N1", "N2", "N3"];

export function stageName(classIndex: number): StageName {
  const name = STAGE_NAMES[classIndex];
  if (name === undefined) {
    throw new RangeError(`class index ${classIndex} has no stage name`);
  }
  return name;
}
