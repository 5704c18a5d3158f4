// Canvas compositing of the base image and per-round mask overlays.
// Colors are a fixed palette keyed by round index, so a round keeps its
// color for the life of the session. In DOM-only test environments the
// canvas has no 2D context; drawing then degrades to a no-op while state
// handling stays fully testable.

export const ROUND_COLORS = [
  "#e6194b",
  "#3cb44b",
  "#4363d8",
  "#f58231",
  "#911eb4",
  "#46f0f0",
  "#f032e6",
  "#ffe119",
];

export function colorForRound(roundIndex: number): string {
  return ROUND_COLORS[(roundIndex - 1) % ROUND_COLORS.length];
}

function loadImage(src: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error("image decode failed"));
    img.src = src;
  });
}

export interface OverlayLayer {
  maskBase64: string;
  color: string;
  visible: boolean;
}

function hexToRgb(hex: string): [number, number, number] {
  const v = parseInt(hex.slice(1), 16);
  return [(v >> 16) & 255, (v >> 8) & 255, v & 255];
}

export async function drawComposite(
  canvas: HTMLCanvasElement,
  width: number,
  height: number,
  imageBase64: string,
  layers: OverlayLayer[],
  alpha = 0.45,
): Promise<boolean> {
  const ctx = canvas.getContext && (canvas.getContext("2d") as CanvasRenderingContext2D | null);
  if (!ctx) {
    return false; // headless DOM without canvas support
  }
  canvas.width = width;
  canvas.height = height;
  const base = await loadImage(`data:image/png;base64,${imageBase64}`);
  ctx.drawImage(base, 0, 0, width, height);
  for (const layer of layers) {
    if (!layer.visible) continue;
    const maskImg = await loadImage(`data:image/png;base64,${layer.maskBase64}`);
    const off = document.createElement("canvas");
    off.width = width;
    off.height = height;
    const octx = off.getContext("2d");
    if (!octx) continue;
    octx.drawImage(maskImg, 0, 0, width, height);
    const data = octx.getImageData(0, 0, width, height);
    const [r, g, b] = hexToRgb(layer.color);
    const px = data.data;
    for (let i = 0; i < px.length; i += 4) {
      const on = px[i] > 127;
      px[i] = r;
      px[i + 1] = g;
      px[i + 2] = b;
      px[i + 3] = on ? Math.round(alpha * 255) : 0;
    }
    octx.putImageData(data, 0, 0);
    ctx.drawImage(off, 0, 0);
  }
  return true;
}
