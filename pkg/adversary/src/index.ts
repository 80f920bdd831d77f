export { Rng } from "./prng.js";
export { Image, decodePpm, encodePpm, readPpm, writePpm } from "./ppm.js";
export { DatasetOptions, generateDataset, synthesizeScene } from "./scenes.js";
export {
  FeatureMaps,
  LayerEntry,
  Manifest,
  layerEntry,
  loadManifest,
  readFeatureMaps,
  resolveImagePaths,
} from "./manifest.js";
export { batchNorm, bceWithLogits, conv2d, everyNth, leakyRelu, relu, setupBackend, upsample2 } from "./ops.js";
export { ConvParams, DenseParams, NormParams, ParameterStore } from "./params.js";
export { ConditionShape, Discriminator, Generator, downStrides } from "./model.js";
export {
  EpochLosses,
  TRAIN_DEFAULTS,
  TrainConfig,
  TrainedAdversary,
  loadCheckpoint,
  saveCheckpoint,
  trainAdversary,
} from "./train.js";
export { ReconstructOptions, reconstructImages } from "./reconstruct.js";
export {
  ORACLE_DEFAULTS,
  OracleConfig,
  OracleRecord,
  ReconstructionMode,
  oracleRun,
  readScoresFile,
  scorePairs,
  writeScoresFile,
} from "./oracle.js";
