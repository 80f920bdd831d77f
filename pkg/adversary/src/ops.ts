import * as tf from "@tensorflow/tfjs";

/**
 * Building blocks written against the intersection of ops whose forward AND
 * backward passes the wasm backend implements. Convolution is the notable
 * gap: the backend ships conv2d forward kernels but not its filter/input
 * gradients, and stridedSlice has no gradient at all. Everything here
 * therefore reduces to pad / slice / reshape / transpose / concat / matMul,
 * whose gradients are themselves composed of supported forward ops.
 */

let backendReady: Promise<string> | null = null;

/** Selects the wasm backend once per process, falling back to plain cpu. */
export function setupBackend(): Promise<string> {
  if (!backendReady) {
    backendReady = (async () => {
      try {
        await import("@tensorflow/tfjs-backend-wasm");
        await tf.setBackend("wasm");
      } catch {
        await tf.setBackend("cpu");
      }
      await tf.ready();
      return tf.getBackend();
    })();
  }
  return backendReady;
}

/** Keeps every stride-th row and column using rank-4 reshape + slice only. */
export function everyNth(x: tf.Tensor4D, stride: number, oh: number, ow: number): tf.Tensor4D {
  const [n, , , c] = x.shape;
  let t = tf.reshape(x, [n, oh, stride, ow * stride * c]);
  t = tf.slice(t, [0, 0, 0, 0], [n, oh, 1, ow * stride * c]);
  t = tf.reshape(t, [n * oh, ow, stride, c]);
  t = tf.slice(t, [0, 0, 0, 0], [n * oh, ow, 1, c]);
  return tf.reshape(t, [n, oh, ow, c]) as tf.Tensor4D;
}

/**
 * 2-D convolution (NHWC, symmetric zero padding) as an explicit im2col:
 * one shifted slice per kernel tap, concatenated and multiplied out as a
 * single matMul. Bit-identical to conv2d forward, but trainable on wasm.
 */
export function conv2d(
  x: tf.Tensor4D,
  w: tf.Tensor4D,
  b: tf.Tensor1D,
  stride: number,
  pad: number,
): tf.Tensor4D {
  const [n, h, wd, cin] = x.shape;
  const [kh, kw, wcin, cout] = w.shape as [number, number, number, number];
  if (wcin !== cin) throw new Error(`kernel expects ${wcin} channels, input has ${cin}`);
  const oh = Math.floor((h + 2 * pad - kh) / stride) + 1;
  const ow = Math.floor((wd + 2 * pad - kw) / stride) + 1;
  if (oh < 1 || ow < 1) throw new Error(`conv ${h}x${wd} k${kh} s${stride} p${pad} underflows`);
  // extra bottom/right padding keeps every tap's slice in bounds; the
  // surplus rows and columns land in block positions everyNth discards
  const extra = stride > 1 ? stride : 0;
  const xp =
    pad + extra > 0
      ? (tf.pad(x, [
          [0, 0],
          [pad, pad + extra],
          [pad, pad + extra],
          [0, 0],
        ]) as tf.Tensor4D)
      : x;
  const cols: tf.Tensor4D[] = [];
  for (let dy = 0; dy < kh; dy++) {
    for (let dx = 0; dx < kw; dx++) {
      const s = tf.slice(xp, [0, dy, dx, 0], [n, oh * stride, ow * stride, cin]) as tf.Tensor4D;
      cols.push(stride > 1 ? everyNth(s, stride, oh, ow) : s);
    }
  }
  const flat = tf.reshape(tf.concat(cols, 3), [n * oh * ow, kh * kw * cin]);
  const y = tf.matMul(flat, tf.reshape(w, [kh * kw * cin, cout]));
  return tf.add(tf.reshape(y, [n, oh, ow, cout]), b) as tf.Tensor4D;
}

/**
 * Nearest-neighbor x2 upsampling. The obvious tile/image-resize routes have
 * no wasm gradients, so rows and columns are duplicated by a pair of
 * rank-4 reshape + concat + transpose passes.
 */
export function upsample2(x: tf.Tensor4D): tf.Tensor4D {
  const [n, h, w, c] = x.shape;
  let y = tf.reshape(x, [n, h, 1, w * c]);
  y = tf.concat([y, y], 2); // duplicate rows
  y = tf.reshape(y, [n, 2 * h, w, c]);
  y = tf.transpose(y, [0, 2, 1, 3]); // swap h and w
  y = tf.reshape(y, [n, w, 1, 2 * h * c]);
  y = tf.concat([y, y], 2); // duplicate (original) columns
  y = tf.reshape(y, [n, 2 * w, 2 * h, c]);
  return tf.transpose(y, [0, 2, 1, 3]) as tf.Tensor4D;
}

/** Batch normalization over batch and spatial axes, batch statistics only. */
export function batchNorm(x: tf.Tensor, gain: tf.Tensor1D, shift: tf.Tensor1D): tf.Tensor {
  const axes = x.shape.length === 4 ? [0, 1, 2] : [0];
  const mean = tf.mean(x, axes, true);
  const variance = tf.mean(tf.square(tf.sub(x, mean)), axes, true);
  const normed = tf.div(tf.sub(x, mean), tf.sqrt(tf.add(variance, 1e-5)));
  return tf.add(tf.mul(normed, gain), shift);
}

export const leakyRelu = (x: tf.Tensor): tf.Tensor => tf.maximum(x, tf.mul(x, 0.2));

export const relu = (x: tf.Tensor): tf.Tensor => tf.maximum(x, 0);

/** Mean binary cross-entropy against a constant target, on logits (stable). */
export function bceWithLogits(logits: tf.Tensor, target: 0 | 1): tf.Scalar {
  const loss = target === 1 ? tf.sub(tf.softplus(logits), logits) : tf.softplus(logits);
  return tf.mean(loss) as tf.Scalar;
}
