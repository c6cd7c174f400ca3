// Copyright (c) the HBVC Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hbvc/toygen.hpp"

#include <cmath>
#include <filesystem>

namespace hbvc {

namespace fs = std::filesystem;

namespace {

struct Wave {
  double fx, fy, phase, amp;
};

// Smooth band-limited texture from a handful of seeded plane waves.
struct Texture {
  std::vector<Wave> waves[3];

  static Texture make(Rng& rng, int n_waves, double max_freq) {
    Texture t;
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < n_waves; ++i) {
        const double f = rng.uniform(0.01, max_freq);
        const double ang = rng.uniform(0.0, 2.0 * M_PI);
        t.waves[c].push_back({f * std::cos(ang), f * std::sin(ang),
                              rng.uniform(0.0, 2.0 * M_PI),
                              rng.uniform(0.3, 1.0)});
      }
    return t;
  }

  double sample(int c, double x, double y) const {
    double acc = 0.0, norm = 0.0;
    for (const Wave& w : waves[c]) {
      acc += w.amp * std::sin(w.fx * x + w.fy * y + w.phase);
      norm += w.amp;
    }
    return 0.5 + 0.4 * acc / norm;
  }
};

Tensor render(const Texture& tex, int W, int H,
              const std::function<void(double, double, double*, double*)>& warp) {
  Tensor t(1, 3, H, W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double sx, sy;
      warp(x + 0.5, y + 0.5, &sx, &sy);
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) = static_cast<float>(
            std::min(1.0, std::max(0.0, tex.sample(c, sx, sy))));
    }
  return t;
}

}  // namespace

Tensor render_toy_frame(const std::string& kind, int W, int H, int t,
                        uint64_t seed) {
  Rng rng(seed);
  if (kind == "translate") {
    const Texture tex = Texture::make(rng, 6, 0.35);
    const double vx = rng.uniform(-3.0, 3.0), vy = rng.uniform(-2.0, 2.0);
    return render(tex, W, H, [&](double x, double y, double* sx, double* sy) {
      *sx = x - vx * t;
      *sy = y - vy * t;
    });
  }
  if (kind == "shear") {
    // two layers moving at different velocities, blended by a soft vertical
    // split, approximating occlusion boundaries
    const Texture texa = Texture::make(rng, 5, 0.3);
    const Texture texb = Texture::make(rng, 5, 0.5);
    const double va = rng.uniform(-2.5, 2.5), vb = rng.uniform(-2.5, 2.5);
    const double split = rng.uniform(0.3, 0.7) * W;
    Tensor out(1, 3, H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double alpha =
            1.0 / (1.0 + std::exp(-(x - split) / (0.03 * W)));
        for (int c = 0; c < 3; ++c) {
          const double a = texa.sample(c, x + 0.5 - va * t, y + 0.5);
          const double b = texb.sample(c, x + 0.5 - vb * t, y + 0.5 + va * t);
          out.at(0, c, y, x) = static_cast<float>(
              std::min(1.0, std::max(0.0, a * (1 - alpha) + b * alpha)));
        }
      }
    return out;
  }
  if (kind == "spin") {
    // rotation + zoom about the frame centre
    const Texture tex = Texture::make(rng, 6, 0.4);
    const double omega = rng.uniform(0.01, 0.03);
    const double zoom_rate = rng.uniform(0.004, 0.01);
    const double cx = W / 2.0, cy = H / 2.0;
    return render(tex, W, H, [&](double x, double y, double* sx, double* sy) {
      const double ang = -omega * t;
      const double z = std::exp(-zoom_rate * t);
      const double dx = (x - cx) * z, dy = (y - cy) * z;
      *sx = cx + dx * std::cos(ang) - dy * std::sin(ang);
      *sy = cy + dx * std::sin(ang) + dy * std::cos(ang);
    });
  }
  throw ConfigError("unknown toy kind: " + kind);
}

namespace {
void write_seq(const std::string& dir, const std::string& kind, int W, int H,
               int frames, uint64_t seed) {
  FrameSequence seq;
  for (int t = 0; t < frames; ++t) {
    Tensor rgb = render_toy_frame(kind, W, H, t, seed);
    seq.frames.push_back(pad_frame(rgb, Provenance::kOriginal));
  }
  write_sequence(seq, dir, SequenceFormat::kImageDir);
}
}  // namespace

void write_toy_dataset(const std::string& root, uint64_t seed) {
  Rng rng(seed);
  const fs::path r(root);
  const char* train_kinds[6] = {"translate", "shear", "translate",
                                "shear",     "translate", "shear"};
  for (int i = 0; i < 6; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "seq%02d", i);
    write_seq((r / "train" / name).string(), train_kinds[i], 192, 128, 16,
              rng.next_u64());
  }
  for (int i = 0; i < 2; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "seq%02d", i);
    write_seq((r / "val" / name).string(), i == 0 ? "translate" : "shear", 192,
              128, 16, rng.next_u64());
  }
  for (int i = 0; i < 2; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "seq%02d", i);
    write_seq((r / "eval" / name).string(), i == 0 ? "translate" : "shear",
              128, 128, 17, rng.next_u64());
  }
  write_seq((r / "heldout" / "seq00").string(), "spin", 128, 128, 17,
            rng.next_u64());
}

}  // namespace hbvc
