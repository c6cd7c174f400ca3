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

#include "hbvc/media_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace hbvc {

namespace fs = std::filesystem;

namespace {
// BT.709 full-range luma coefficients.
constexpr double kKr = 0.2126, kKb = 0.0722;
constexpr double kKg = 1.0 - kKr - kKb;
constexpr double kCbScale = 2.0 * (1.0 - kKb);  // 1.8556
constexpr double kCrScale = 2.0 * (1.0 - kKr);  // 1.5748

float clamp01(double x) {
  return static_cast<float>(std::min(1.0, std::max(0.0, x)));
}
}  // namespace

uint8_t quantize_8bit(float x) {
  const float y = std::floor(x * 255.0f + 0.5f);
  return static_cast<uint8_t>(std::min(255.0f, std::max(0.0f, y)));
}

int pad_to_multiple_of_64(int x) {
  const int padded = ((std::max(x, 1) + 63) / 64) * 64;
  return std::max(padded, 64);
}

Frame pad_frame(const Tensor& rgb, Provenance origin) {
  if (rgb.n != 1 || rgb.c != 3) throw ShapeError("pad_frame: expected (1,3,H,W)");
  const int H = rgb.h, W = rgb.w;
  const int Hp = pad_to_multiple_of_64(H), Wp = pad_to_multiple_of_64(W);
  Frame f;
  f.orig_h = H;
  f.orig_w = W;
  f.origin = origin;
  if (Hp == H && Wp == W) {
    f.pixels = rgb;
    return f;
  }
  f.pixels = Tensor(1, 3, Hp, Wp);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < Hp; ++y) {
      const int sy = std::min(y, H - 1);
      for (int x = 0; x < Wp; ++x)
        f.pixels.at(0, c, y, x) = rgb.at(0, c, sy, std::min(x, W - 1));
    }
  return f;
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw FormatError("not a P6 ppm: " + path);
  auto next_int = [&in, &path]() {
    int v;
    // skip whitespace and comment lines
    while (true) {
      const int ch = in.peek();
      if (ch == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(ch)) {
        in.get();
      } else {
        break;
      }
    }
    if (!(in >> v)) throw FormatError("bad ppm header: " + path);
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (maxval != 255) throw FormatError("only 8-bit ppm supported: " + path);
  in.get();  // single whitespace after maxval
  std::vector<uint8_t> buf(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (in.gcount() != static_cast<std::streamsize>(buf.size()))
    throw FormatError("truncated ppm: " + path);
  Tensor t(1, 3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        t.at(0, c, y, x) =
            buf[(static_cast<size_t>(y) * w + x) * 3 + c] / 255.0f;
  return t;
}

void write_ppm(const std::string& path, const Tensor& rgb) {
  if (rgb.n != 1 || rgb.c != 3) throw ShapeError("write_ppm: expected (1,3,H,W)");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "P6\n" << rgb.w << " " << rgb.h << "\n255\n";
  std::vector<uint8_t> buf(static_cast<size_t>(rgb.w) * rgb.h * 3);
  for (int y = 0; y < rgb.h; ++y)
    for (int x = 0; x < rgb.w; ++x)
      for (int c = 0; c < 3; ++c)
        buf[(static_cast<size_t>(y) * rgb.w + x) * 3 + c] =
            quantize_8bit(rgb.at(0, c, y, x));
  out.write(reinterpret_cast<const char*>(buf.data()), buf.size());
  if (!out) throw IoError("short write: " + path);
}

void write_raw_float(const std::string& path, const Tensor& rgb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  const int32_t hdr[4] = {rgb.n, rgb.c, rgb.h, rgb.w};
  out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  out.write(reinterpret_cast<const char*>(rgb.data()),
            rgb.size() * sizeof(float));
  if (!out) throw IoError("short write: " + path);
}

Tensor read_raw_float(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  int32_t hdr[4];
  in.read(reinterpret_cast<char*>(hdr), sizeof(hdr));
  Tensor t(hdr[0], hdr[1], hdr[2], hdr[3]);
  in.read(reinterpret_cast<char*>(t.data()), t.size() * sizeof(float));
  if (in.gcount() != static_cast<std::streamsize>(t.size() * sizeof(float)))
    throw FormatError("truncated raw frame: " + path);
  return t;
}

namespace {

FrameSequence load_image_dir(const std::string& path, double frame_rate) {
  if (!fs::is_directory(path)) throw IoError("missing path: " + path);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(path)) {
    if (!e.is_regular_file()) continue;
    if (e.path().extension() == ".ppm") names.push_back(e.path().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw FormatError("no frames found in " + path);
  FrameSequence seq;
  seq.frame_rate = frame_rate;
  for (const auto& n : names) {
    Frame f = pad_frame(read_ppm(n), Provenance::kOriginal);
    if (!seq.frames.empty() &&
        (f.orig_h != seq.orig_h() || f.orig_w != seq.orig_w()))
      throw FormatError("frame size mismatch at " + n);
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

FrameSequence load_raw_yuv(const std::string& path, const LoadOptions& opts) {
  if (!fs::is_regular_file(path)) throw IoError("missing path: " + path);
  const int W = opts.width, H = opts.height;
  if (W <= 0 || H <= 0)
    throw ConfigError("raw yuv load requires width and height");
  if (W % 2 != 0 || H % 2 != 0)
    throw ConfigError("raw yuv420 requires even dimensions");
  const size_t frame_bytes = static_cast<size_t>(W) * H * 3 / 2;
  const size_t fsize = fs::file_size(path);
  if (fsize == 0 || fsize % frame_bytes != 0)
    throw FormatError("truncated raw file: size not a multiple of frame size");
  const size_t count = fsize / frame_bytes;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);

  FrameSequence seq;
  seq.frame_rate = opts.frame_rate;
  std::vector<uint8_t> buf(frame_bytes);
  const int cw = W / 2;
  for (size_t fi = 0; fi < count; ++fi) {
    in.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
      throw FormatError("truncated raw file: short read");
    const uint8_t* yp = buf.data();
    const uint8_t* up = yp + static_cast<size_t>(W) * H;
    const uint8_t* vp = up + static_cast<size_t>(cw) * (H / 2);
    Tensor rgb(1, 3, H, W);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double yy = yp[static_cast<size_t>(y) * W + x] / 255.0;
        const size_t ci = static_cast<size_t>(y / 2) * cw + x / 2;
        const double u = (up[ci] - 128.0) / 255.0;
        const double v = (vp[ci] - 128.0) / 255.0;
        rgb.at(0, 0, y, x) = clamp01(yy + kCrScale * v);
        rgb.at(0, 1, y, x) = clamp01(yy - (kKb * kCbScale / kKg) * u -
                                     (kKr * kCrScale / kKg) * v);
        rgb.at(0, 2, y, x) = clamp01(yy + kCbScale * u);
      }
    seq.frames.push_back(pad_frame(rgb, Provenance::kOriginal));
  }
  return seq;
}

Tensor crop_to_original(const Frame& f) {
  if (f.orig_h == f.height() && f.orig_w == f.width()) return f.pixels;
  Tensor out(1, 3, f.orig_h, f.orig_w);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < f.orig_h; ++y)
      for (int x = 0; x < f.orig_w; ++x)
        out.at(0, c, y, x) = f.pixels.at(0, c, y, x);
  return out;
}

void write_raw_yuv(const FrameSequence& seq, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& f : seq.frames) {
    const Tensor rgb = crop_to_original(f);
    const int H = rgb.h, W = rgb.w;
    const int cw = W / 2, ch = H / 2;
    std::vector<uint8_t> ybuf(static_cast<size_t>(W) * H);
    std::vector<double> usum(static_cast<size_t>(cw) * ch, 0.0);
    std::vector<double> vsum(usum.size(), 0.0);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double r = rgb.at(0, 0, y, x), g = rgb.at(0, 1, y, x),
                     b = rgb.at(0, 2, y, x);
        const double yy = kKr * r + kKg * g + kKb * b;
        ybuf[static_cast<size_t>(y) * W + x] =
            quantize_8bit(static_cast<float>(yy));
        const size_t ci = static_cast<size_t>(y / 2) * cw + x / 2;
        usum[ci] += (b - yy) / kCbScale;
        vsum[ci] += (r - yy) / kCrScale;
      }
    std::vector<uint8_t> ubuf(usum.size()), vbuf(usum.size());
    for (size_t i = 0; i < usum.size(); ++i) {
      ubuf[i] = static_cast<uint8_t>(std::min(
          255.0, std::max(0.0, std::floor(usum[i] / 4.0 * 255.0 + 128.5))));
      vbuf[i] = static_cast<uint8_t>(std::min(
          255.0, std::max(0.0, std::floor(vsum[i] / 4.0 * 255.0 + 128.5))));
    }
    out.write(reinterpret_cast<const char*>(ybuf.data()), ybuf.size());
    out.write(reinterpret_cast<const char*>(ubuf.data()), ubuf.size());
    out.write(reinterpret_cast<const char*>(vbuf.data()), vbuf.size());
  }
  if (!out) throw IoError("short write: " + path);
}

}  // namespace

FrameSequence load_sequence(const std::string& path, SequenceFormat format,
                            const LoadOptions& opts) {
  switch (format) {
    case SequenceFormat::kImageDir:
      return load_image_dir(path, opts.frame_rate);
    case SequenceFormat::kRawYuv420:
      return load_raw_yuv(path, opts);
  }
  throw ConfigError("unsupported format");
}

void write_sequence(const FrameSequence& seq, const std::string& path,
                    SequenceFormat format) {
  if (format == SequenceFormat::kRawYuv420) {
    fs::create_directories(fs::path(path).parent_path());
    write_raw_yuv(seq, path);
    return;
  }
  fs::create_directories(path);
  char name[32];
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "%06zu.ppm", i);
    write_ppm((fs::path(path) / name).string(), crop_to_original(seq.frames[i]));
  }
}

TrainingClip sample_training_clip(const FrameSequence& seq, int clip_len,
                                  int crop, Rng& rng) {
  if (clip_len != 3 && clip_len != 5)
    throw ConfigError("clip_len must be 3 or 5");
  const int n = static_cast<int>(seq.frames.size());
  if (n < clip_len) throw Error("sequence shorter than clip length");
  const int H = seq.height(), W = seq.width();
  if (crop > std::min(H, W)) throw ConfigError("crop larger than frame");

  TrainingClip clip;
  clip.start_index = static_cast<int>(rng.uniform_int(0, n - clip_len));
  clip.crop_row = static_cast<int>(rng.uniform_int(0, H - crop));
  clip.crop_col = static_cast<int>(rng.uniform_int(0, W - crop));
  clip.reversed = rng.uniform() < 0.5;
  for (int k = 0; k < clip_len; ++k) {
    const int idx =
        clip.reversed ? clip.start_index + clip_len - 1 - k : clip.start_index + k;
    const Frame& src = seq.frames[idx];
    Frame f;
    f.orig_h = crop;
    f.orig_w = crop;
    f.origin = Provenance::kOriginal;
    f.pixels = Tensor(1, 3, crop, crop);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < crop; ++y)
        for (int x = 0; x < crop; ++x)
          f.pixels.at(0, c, y, x) =
              src.pixels.at(0, c, clip.crop_row + y, clip.crop_col + x);
    clip.frames.push_back(std::move(f));
  }
  return clip;
}

}  // namespace hbvc
