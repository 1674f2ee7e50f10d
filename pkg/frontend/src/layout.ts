/** Small deterministic force layout: springs along links, pairwise
 * repulsion, gentle centering.  No randomness so the same model always
 * settles into the same picture, and position updates are pure (the
 * model's map is replaced, never mutated).
 */

import { GraphModel, Position } from "./model.js";

const SPRING_LENGTH = 90;
const SPRING_STRENGTH = 0.02;
const REPULSION = 4200;
const CENTERING = 0.005;
const STEP_LIMIT = 18;

export function runLayout(model: GraphModel, iterations = 120): Map<number, Position> {
  const ids = model.nodes.map((n) => n.id).sort((a, b) => a - b);
  const pos = new Map<number, Position>();
  for (const id of ids) {
    const p = model.positions.get(id) ?? { x: 0, y: 0 };
    pos.set(id, { x: p.x, y: p.y });
  }

  for (let round = 0; round < iterations; round++) {
    const force = new Map<number, Position>();
    for (const id of ids) force.set(id, { x: 0, y: 0 });

    for (let i = 0; i < ids.length; i++) {
      const a = pos.get(ids[i])!;
      for (let j = i + 1; j < ids.length; j++) {
        const b = pos.get(ids[j])!;
        let dx = a.x - b.x;
        let dy = a.y - b.y;
        let dsq = dx * dx + dy * dy;
        if (dsq < 0.01) {
          // Coincident nodes get a deterministic nudge apart.
          dx = 0.1 * (i + 1);
          dy = 0.1 * (j + 1);
          dsq = dx * dx + dy * dy;
        }
        const push = REPULSION / dsq;
        const dist = Math.sqrt(dsq);
        const fx = (dx / dist) * push;
        const fy = (dy / dist) * push;
        const fa = force.get(ids[i])!;
        const fb = force.get(ids[j])!;
        fa.x += fx;
        fa.y += fy;
        fb.x -= fx;
        fb.y -= fy;
      }
    }

    for (const link of model.links) {
      const a = pos.get(link.source);
      const b = pos.get(link.target);
      if (!a || !b) continue;
      const dx = b.x - a.x;
      const dy = b.y - a.y;
      const dist = Math.max(1, Math.sqrt(dx * dx + dy * dy));
      const pull = SPRING_STRENGTH * (dist - SPRING_LENGTH);
      const fx = (dx / dist) * pull;
      const fy = (dy / dist) * pull;
      const fa = force.get(link.source)!;
      const fb = force.get(link.target)!;
      fa.x += fx;
      fa.y += fy;
      fb.x -= fx;
      fb.y -= fy;
    }

    for (const id of ids) {
      const p = pos.get(id)!;
      const f = force.get(id)!;
      f.x -= p.x * CENTERING;
      f.y -= p.y * CENTERING;
      p.x += clamp(f.x, STEP_LIMIT);
      p.y += clamp(f.y, STEP_LIMIT);
    }
  }
  return pos;
}

function clamp(v: number, limit: number): number {
  return Math.max(-limit, Math.min(limit, v));
}
