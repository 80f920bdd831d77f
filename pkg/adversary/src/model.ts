import * as tf from "@tensorflow/tfjs";
import { Rng } from "./prng.js";
import { ConvParams, DenseParams, NormParams, ParameterStore } from "./params.js";
import { batchNorm, conv2d, leakyRelu, relu, upsample2 } from "./ops.js";

/**
 * The condition is whatever the inference side exported for one layer:
 * spatial feature maps [h, w, c] or a flat vector [d] (dense/softmax
 * layers). The generator maps condition + noise to an RGB image; the
 * discriminator judges (image, condition) pairs.
 */
export type ConditionShape = number[];

/** Down-sampling factors (each 1, 2, or 4) taking `from` to `to` in n convs. */
export function downStrides(from: number, to: number, n: number): number[] {
  let need = from / to;
  const strides: number[] = [];
  for (let i = 0; i < n; i++) {
    let s = 1;
    while (need % 2 === 0 && need > 1 && s < 4) {
      s *= 2;
      need /= 2;
    }
    strides.push(s);
  }
  if (need !== 1) throw new Error(`cannot down-sample ${from} to ${to} in ${n} convolutions`);
  return strides;
}

// kernel/padding per stride, chosen to map even sizes exactly:
// stride 1 -> 3x3 pad 1 (preserves), stride 2 -> 4x4 pad 1 (halves),
// stride 4 -> 4x4 pad 0 (quarters)
const kernelFor = (s: number): number => (s === 1 ? 3 : 4);
const padFor = (s: number): number => (s === 4 ? 0 : 1);

interface ConvBlock {
  conv: ConvParams;
  norm: NormParams;
}

const ENCODER_FILTERS = [32, 64, 96];
const DECODER_FILTERS = [64, 48, 32, 16];
const RESIDUAL_BLOCKS = 4;
const NOISE_CHANNELS = 1;

/**
 * Image reconstructor: a condition encoder down to a square bottleneck
 * (1/16 of the image side), a noise channel concatenated there, four
 * residual blocks, then four nearest-neighbor-upsample + conv blocks back
 * to image resolution, finishing in a sigmoid RGB head.
 */
export class Generator {
  readonly store: ParameterStore;
  readonly bottleneck: number;
  readonly spatial: boolean;
  private strides: number[] = [];
  private encoder: ConvBlock[] = [];
  private projection?: DenseParams;
  private projectionNorm?: NormParams;
  private residual: ConvBlock[] = [];
  private decoder: ConvBlock[] = [];
  private output: ConvParams;

  constructor(
    readonly condShape: ConditionShape,
    readonly imageSize: number,
    rng: Rng,
  ) {
    if (imageSize % 16 !== 0) throw new Error(`image size ${imageSize} not a multiple of 16`);
    this.store = new ParameterStore(rng);
    this.bottleneck = Math.max(1, Math.floor(imageSize / 16));
    this.spatial = condShape.length === 3;

    const trunkChannels = ENCODER_FILTERS[2] + NOISE_CHANNELS;
    if (this.spatial) {
      this.strides = downStrides(condShape[0], this.bottleneck, 3);
      let cin = condShape[2];
      for (let i = 0; i < 3; i++) {
        const cout = ENCODER_FILTERS[i];
        this.encoder.push({
          conv: this.store.conv(kernelFor(this.strides[i]), cin, cout),
          norm: this.store.norm(cout),
        });
        cin = cout;
      }
    } else {
      if (condShape.length !== 1) throw new Error(`condition rank ${condShape.length} unsupported`);
      this.projection = this.store.dense(condShape[0], this.bottleneck ** 2 * ENCODER_FILTERS[2]);
      this.projectionNorm = this.store.norm(ENCODER_FILTERS[2]);
    }
    for (let i = 0; i < RESIDUAL_BLOCKS; i++) {
      this.residual.push({
        conv: this.store.conv(3, trunkChannels, trunkChannels),
        norm: this.store.norm(trunkChannels),
      });
    }
    let cin = trunkChannels;
    for (const cout of DECODER_FILTERS) {
      this.decoder.push({ conv: this.store.conv(3, cin, cout), norm: this.store.norm(cout) });
      cin = cout;
    }
    this.output = this.store.conv(3, cin, 3);
  }

  /** cond [n, ...condShape], noise [n, bottleneck, bottleneck, 1] -> [n, size, size, 3] in (0,1). */
  apply(cond: tf.Tensor, noise: tf.Tensor4D): tf.Tensor4D {
    this.checkCondition(cond);
    let x: tf.Tensor;
    if (this.spatial) {
      x = cond;
      for (let i = 0; i < this.encoder.length; i++) {
        const { conv, norm } = this.encoder[i];
        const stride = this.strides[i];
        x = relu(
          batchNorm(
            conv2d(x as tf.Tensor4D, conv.w as tf.Tensor4D, conv.b as tf.Tensor1D, stride, padFor(stride)),
            norm.gain as tf.Tensor1D,
            norm.shift as tf.Tensor1D,
          ),
        );
      }
    } else {
      const projected = tf.add(tf.matMul(cond as tf.Tensor2D, this.projection!.w as tf.Tensor2D), this.projection!.b);
      x = tf.reshape(projected, [cond.shape[0], this.bottleneck, this.bottleneck, ENCODER_FILTERS[2]]);
      x = relu(batchNorm(x, this.projectionNorm!.gain as tf.Tensor1D, this.projectionNorm!.shift as tf.Tensor1D));
    }
    x = tf.concat([x as tf.Tensor4D, noise], 3);
    for (const { conv, norm } of this.residual) {
      const branch = relu(
        batchNorm(
          conv2d(x as tf.Tensor4D, conv.w as tf.Tensor4D, conv.b as tf.Tensor1D, 1, 1),
          norm.gain as tf.Tensor1D,
          norm.shift as tf.Tensor1D,
        ),
      );
      x = tf.add(x, branch);
    }
    for (const { conv, norm } of this.decoder) {
      x = relu(
        batchNorm(
          conv2d(upsample2(x as tf.Tensor4D), conv.w as tf.Tensor4D, conv.b as tf.Tensor1D, 1, 1),
          norm.gain as tf.Tensor1D,
          norm.shift as tf.Tensor1D,
        ),
      );
    }
    return tf.sigmoid(
      conv2d(x as tf.Tensor4D, this.output.w as tf.Tensor4D, this.output.b as tf.Tensor1D, 1, 1),
    ) as tf.Tensor4D;
  }

  private checkCondition(cond: tf.Tensor): void {
    const got = cond.shape.slice(1).join("x");
    const want = this.condShape.join("x");
    if (got !== want) throw new Error(`condition batch is ${got}, generator expects ${want}`);
  }

  dispose(): void {
    this.store.dispose();
  }
}

const STACK_FILTERS = [32, 48, 64, 96, 128];
const IMAGE_PATH_FILTERS = 12;
const VECTOR_CONDITION_CHANNELS = 4;

interface StackBlock {
  conv: ConvParams;
  norm: NormParams | null;
  kernel: number;
  stride: number;
  pad: number;
}

/**
 * Conditioned critic: two convolutions bring the candidate image down to
 * the condition's spatial grid, the condition is concatenated as extra
 * channels, and five stride-2 4x4 convolutions (clamped on tiny grids)
 * feed a single-logit dense head. Vector conditions enter through a dense
 * projection onto a quarter-resolution grid instead.
 */
export class Discriminator {
  readonly store: ParameterStore;
  readonly condSize: number;
  readonly spatial: boolean;
  private imgStrides: number[];
  private imagePath: ConvParams[] = [];
  private projection?: DenseParams;
  private stack: StackBlock[] = [];
  private head: DenseParams;

  constructor(
    readonly condShape: ConditionShape,
    readonly imageSize: number,
    rng: Rng,
  ) {
    this.store = new ParameterStore(rng);
    this.spatial = condShape.length === 3;
    this.condSize = this.spatial ? condShape[0] : Math.max(1, Math.floor(imageSize / 4));
    this.imgStrides = downStrides(imageSize, this.condSize, 2);
    let cin = 3;
    for (const stride of this.imgStrides) {
      this.imagePath.push(this.store.conv(kernelFor(stride), cin, IMAGE_PATH_FILTERS));
      cin = IMAGE_PATH_FILTERS;
    }
    const condChannels = this.spatial ? condShape[2] : VECTOR_CONDITION_CHANNELS;
    if (!this.spatial) {
      this.projection = this.store.dense(condShape[0], this.condSize ** 2 * condChannels);
    }
    let channels = IMAGE_PATH_FILTERS + condChannels;
    let grid = this.condSize;
    STACK_FILTERS.forEach((filters, i) => {
      // 4x4 stride 2 while the grid allows; clamp once it reaches 2 or 1
      const step =
        grid >= 4
          ? { kernel: 4, stride: 2, pad: 1 }
          : grid === 2
            ? { kernel: 2, stride: 2, pad: 0 }
            : { kernel: 1, stride: 1, pad: 0 };
      this.stack.push({
        conv: this.store.conv(step.kernel, channels, filters),
        norm: i < STACK_FILTERS.length - 1 ? this.store.norm(filters) : null,
        ...step,
      });
      channels = filters;
      grid = step.stride === 2 ? Math.max(1, Math.floor(grid / 2)) : grid;
    });
    this.head = this.store.dense(channels * grid * grid, 1);
  }

  /** img [n, size, size, 3], cond [n, ...condShape] -> logits [n, 1]. */
  logits(img: tf.Tensor4D, cond: tf.Tensor): tf.Tensor2D {
    let x: tf.Tensor = img;
    for (let i = 0; i < this.imagePath.length; i++) {
      const { w, b } = this.imagePath[i];
      const stride = this.imgStrides[i];
      x = leakyRelu(conv2d(x as tf.Tensor4D, w as tf.Tensor4D, b as tf.Tensor1D, stride, padFor(stride)));
    }
    let c: tf.Tensor;
    if (this.spatial) {
      c = cond;
    } else {
      const projected = tf.add(tf.matMul(cond as tf.Tensor2D, this.projection!.w as tf.Tensor2D), this.projection!.b);
      c = leakyRelu(
        tf.reshape(projected, [cond.shape[0], this.condSize, this.condSize, VECTOR_CONDITION_CHANNELS]),
      );
    }
    x = tf.concat([x as tf.Tensor4D, c as tf.Tensor4D], 3);
    for (const { conv, norm, stride, pad } of this.stack) {
      x = conv2d(x as tf.Tensor4D, conv.w as tf.Tensor4D, conv.b as tf.Tensor1D, stride, pad);
      x = norm ? leakyRelu(batchNorm(x, norm.gain as tf.Tensor1D, norm.shift as tf.Tensor1D)) : leakyRelu(x);
    }
    const flat = tf.reshape(x, [img.shape[0], -1]);
    return tf.add(tf.matMul(flat as tf.Tensor2D, this.head.w as tf.Tensor2D), this.head.b) as tf.Tensor2D;
  }

  /** Probability the pair is real, in (0,1). */
  probability(img: tf.Tensor4D, cond: tf.Tensor): tf.Tensor2D {
    return tf.sigmoid(this.logits(img, cond)) as tf.Tensor2D;
  }

  dispose(): void {
    this.store.dispose();
  }
}
