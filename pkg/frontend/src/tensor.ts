/**
 * Parser for the service's binary tensor container, so maps like the
 * similarity heatmap can be rendered entirely client-side.
 *
 * Layout: magic "TNSR" | u8 version (1) | u8 dtype (0=uint8, 1=float32 LE) |
 * u8 rank | rank x u32 little-endian dims | payload.
 */

const MAGIC = [0x54, 0x4e, 0x53, 0x52]; // "TNSR"
const HEADER_FIXED = 7; // magic + version + dtype + rank

export interface DecodedTensor {
  shape: number[];
  dtype: "uint8" | "float32";
  data: Uint8Array | Float32Array;
}

/** Parse a tensor container from raw bytes. Throws on any malformed field. */
export function decodeTensor(bytes: Uint8Array): DecodedTensor {
  if (bytes.length < HEADER_FIXED) {
    throw new Error(`tensor container truncated at ${bytes.length} bytes`);
  }
  for (let i = 0; i < MAGIC.length; i++) {
    if (bytes[i] !== MAGIC[i]) {
      throw new Error("not a tensor container (bad magic)");
    }
  }
  const version = bytes[4];
  if (version !== 1) {
    throw new Error(`unsupported tensor container version ${version}`);
  }
  const dtypeCode = bytes[5];
  if (dtypeCode !== 0 && dtypeCode !== 1) {
    throw new Error(`unknown tensor dtype code ${dtypeCode}`);
  }
  const rank = bytes[6] as number;
  const headerSize = HEADER_FIXED + 4 * rank;
  if (bytes.length < headerSize) {
    throw new Error("tensor container truncated inside the shape header");
  }
  const view = new DataView(bytes.buffer, bytes.byteOffset, bytes.byteLength);
  const shape: number[] = [];
  let elements = 1;
  for (let i = 0; i < rank; i++) {
    const dim = view.getUint32(HEADER_FIXED + 4 * i, true);
    shape.push(dim);
    elements *= dim;
  }
  const itemSize = dtypeCode === 0 ? 1 : 4;
  const payload = bytes.subarray(headerSize);
  if (payload.length !== elements * itemSize) {
    throw new Error(
      `tensor payload is ${payload.length} bytes, expected ${elements * itemSize}`,
    );
  }
  if (dtypeCode === 0) {
    return { shape, dtype: "uint8", data: payload.slice() };
  }
  // Copy before viewing as float32: the payload offset within the container
  // is not 4-byte aligned.
  const aligned = payload.slice();
  return { shape, dtype: "float32", data: new Float32Array(aligned.buffer, 0, elements) };
}

/** Decode a base64 string (as sent in JSON responses) to raw bytes. */
export function bytesFromBase64(b64: string): Uint8Array {
  const binary = atob(b64);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) {
    bytes[i] = binary.charCodeAt(i);
  }
  return bytes;
}

/** Parse a base64-encoded tensor container. */
export function tensorFromBase64(b64: string): DecodedTensor {
  return decodeTensor(bytesFromBase64(b64));
}
