// World-to-screen mapping: pan/zoom over world coordinates with an
// optional ego-follow mode. North-up by default (world +y renders upward).

export interface CameraState {
  centerX: number;
  centerY: number;
  pixelsPerMeter: number;
  follow: boolean;
}

export class Camera {
  state: CameraState = { centerX: 0, centerY: 0, pixelsPerMeter: 6, follow: true };

  constructor(private viewWidth: number, private viewHeight: number) {}

  resize(w: number, h: number): void {
    this.viewWidth = w;
    this.viewHeight = h;
  }

  toScreen(wx: number, wy: number): [number, number] {
    const s = this.state;
    return [
      this.viewWidth / 2 + (wx - s.centerX) * s.pixelsPerMeter,
      this.viewHeight / 2 - (wy - s.centerY) * s.pixelsPerMeter,
    ];
  }

  toWorld(px: number, py: number): [number, number] {
    const s = this.state;
    return [
      s.centerX + (px - this.viewWidth / 2) / s.pixelsPerMeter,
      s.centerY - (py - this.viewHeight / 2) / s.pixelsPerMeter,
    ];
  }

  pan(dxPx: number, dyPx: number): void {
    this.state.follow = false;
    this.state.centerX -= dxPx / this.state.pixelsPerMeter;
    this.state.centerY += dyPx / this.state.pixelsPerMeter;
  }

  zoom(factor: number, anchorPx?: [number, number]): void {
    const before = anchorPx ? this.toWorld(anchorPx[0], anchorPx[1]) : null;
    this.state.pixelsPerMeter = Math.min(
      Math.max(this.state.pixelsPerMeter * factor, 0.5), 60);
    if (before && anchorPx) {
      const after = this.toWorld(anchorPx[0], anchorPx[1]);
      this.state.centerX += before[0] - after[0];
      this.state.centerY += before[1] - after[1];
    }
  }

  followEgo(x: number, y: number): void {
    if (this.state.follow) {
      this.state.centerX = x;
      this.state.centerY = y;
    }
  }
}
