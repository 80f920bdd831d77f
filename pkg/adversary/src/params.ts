import * as tf from "@tensorflow/tfjs";
import { Rng } from "./prng.js";

export interface ConvParams {
  w: tf.Variable;
  b: tf.Variable;
}

export interface DenseParams {
  w: tf.Variable;
  b: tf.Variable;
}

export interface NormParams {
  gain: tf.Variable;
  shift: tf.Variable;
}

/**
 * Owns a network's trainable variables in creation order. Initialization
 * draws from the caller's Rng so identical seeds rebuild identical nets,
 * and the flat variable list doubles as the optimizer's varList and the
 * checkpoint payload.
 */
export class ParameterStore {
  readonly list: tf.Variable[] = [];

  constructor(private readonly rng: Rng) {}

  private glorot(shape: number[], fanIn: number, fanOut: number): tf.Variable {
    const limit = Math.sqrt(6 / (fanIn + fanOut));
    const data = new Float32Array(shape.reduce((a, b) => a * b, 1));
    for (let i = 0; i < data.length; i++) data[i] = (this.rng.next() * 2 - 1) * limit;
    return this.track(tf.variable(tf.tensor(data, shape)));
  }

  private track(v: tf.Variable): tf.Variable {
    this.list.push(v);
    return v;
  }

  conv(kernel: number, cin: number, cout: number): ConvParams {
    return {
      w: this.glorot([kernel, kernel, cin, cout], kernel * kernel * cin, kernel * kernel * cout),
      b: this.track(tf.variable(tf.zeros([cout]))),
    };
  }

  dense(cin: number, cout: number): DenseParams {
    return {
      w: this.glorot([cin, cout], cin, cout),
      b: this.track(tf.variable(tf.zeros([cout]))),
    };
  }

  norm(channels: number): NormParams {
    return {
      gain: this.track(tf.variable(tf.ones([channels]))),
      shift: this.track(tf.variable(tf.zeros([channels]))),
    };
  }

  /** Concatenated float32 values of all variables, in creation order. */
  async serialize(): Promise<{ shapes: number[][]; values: Float32Array }> {
    const shapes = this.list.map((v) => v.shape.slice());
    const buffers = await Promise.all(this.list.map((v) => v.data() as Promise<Float32Array>));
    const total = buffers.reduce((a, b) => a + b.length, 0);
    const values = new Float32Array(total);
    let offset = 0;
    for (const buf of buffers) {
      values.set(buf, offset);
      offset += buf.length;
    }
    return { shapes, values };
  }

  /** Overwrites all variables from a serialize() payload. */
  restore(shapes: number[][], values: Float32Array): void {
    if (shapes.length !== this.list.length) {
      throw new Error(`checkpoint has ${shapes.length} tensors, network has ${this.list.length}`);
    }
    let offset = 0;
    this.list.forEach((v, i) => {
      const want = v.shape.join("x");
      const got = shapes[i].join("x");
      if (want !== got) throw new Error(`checkpoint tensor ${i} is ${got}, network expects ${want}`);
      const count = v.shape.reduce((a, b) => a * b, 1);
      v.assign(tf.tensor(values.subarray(offset, offset + count), v.shape));
      offset += count;
    });
    if (offset !== values.length) {
      throw new Error(`checkpoint payload has ${values.length} values, networks use ${offset}`);
    }
  }

  dispose(): void {
    for (const v of this.list) v.dispose();
    this.list.length = 0;
  }
}
