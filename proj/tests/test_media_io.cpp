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

#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>

#include "hbvc/media_io.hpp"
#include "hbvc/toygen.hpp"

using namespace hbvc;
namespace fs = std::filesystem;

namespace {
fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("hbvc_media_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}
}  // namespace

TEST_CASE("quantize_8bit follows round-half-up") {
  REQUIRE(quantize_8bit(1.0f) == 255);
  REQUIRE(quantize_8bit(0.0f) == 0);
  REQUIRE(quantize_8bit(0.5f) == 128);  // round(127.5) half-up
  REQUIRE(quantize_8bit(-0.2f) == 0);
  REQUIRE(quantize_8bit(1.7f) == 255);
}

TEST_CASE("padding arithmetic") {
  REQUIRE(pad_to_multiple_of_64(1080) == 1088);
  REQUIRE(pad_to_multiple_of_64(1920) == 1920);
  REQUIRE(pad_to_multiple_of_64(1) == 64);
  REQUIRE(pad_to_multiple_of_64(65) == 128);
}

TEST_CASE("image dir load: identity values, shared sizes") {
  const fs::path dir = temp_dir("dir1");
  Rng rng(1);
  for (int i = 0; i < 7; ++i) {
    Tensor rgb(1, 3, 96, 120);
    for (auto& v : rgb.v) v = static_cast<float>(rng.uniform());
    char name[16];
    std::snprintf(name, sizeof(name), "%06d.ppm", i);
    write_ppm((dir / name).string(), rgb);
  }
  FrameSequence seq = load_sequence(dir.string(), SequenceFormat::kImageDir);
  REQUIRE(seq.frames.size() == 7);
  REQUIRE(seq.height() == 128);  // padded
  REQUIRE(seq.width() == 128);
  REQUIRE(seq.orig_h() == 96);
  REQUIRE(seq.orig_w() == 120);
  for (const auto& f : seq.frames)
    for (float v : f.pixels.v) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
}

TEST_CASE("empty directory fails with no frames found") {
  const fs::path dir = temp_dir("empty");
  REQUIRE_THROWS_WITH(load_sequence(dir.string(), SequenceFormat::kImageDir),
                      Catch::Matchers::ContainsSubstring("no frames found"));
}

TEST_CASE("missing path fails") {
  REQUIRE_THROWS_AS(
      load_sequence("/nonexistent/path", SequenceFormat::kImageDir), IoError);
}

TEST_CASE("load-write-load is idempotent on 8-bit sources") {
  const fs::path dir = temp_dir("idem");
  Rng rng(2);
  for (int i = 0; i < 3; ++i) {
    Tensor rgb(1, 3, 64, 64);
    for (auto& v : rgb.v) v = static_cast<float>(rng.uniform());
    char name[16];
    std::snprintf(name, sizeof(name), "%03d.ppm", i);
    write_ppm((dir / name).string(), rgb);
  }
  FrameSequence a = load_sequence(dir.string(), SequenceFormat::kImageDir);
  const fs::path dir2 = temp_dir("idem2");
  write_sequence(a, dir2.string(), SequenceFormat::kImageDir);
  FrameSequence b = load_sequence(dir2.string(), SequenceFormat::kImageDir);
  REQUIRE(a.frames.size() == b.frames.size());
  for (size_t i = 0; i < a.frames.size(); ++i)
    REQUIRE(a.frames[i].pixels.v == b.frames[i].pixels.v);
}

TEST_CASE("raw yuv420 padding and original size bookkeeping") {
  const fs::path dir = temp_dir("yuv");
  const fs::path file = dir / "in.yuv";
  {
    // 2 frames of 32x24 YUV420 (exercises the padding rule at small size)
    std::ofstream out(file, std::ios::binary);
    std::vector<char> frame(32 * 24 * 3 / 2, 0);
    for (size_t i = 0; i < frame.size(); ++i) frame[i] = char(i * 7 % 251);
    out.write(frame.data(), frame.size());
    out.write(frame.data(), frame.size());
  }
  LoadOptions opts;
  opts.width = 32;
  opts.height = 24;
  FrameSequence seq =
      load_sequence(file.string(), SequenceFormat::kRawYuv420, opts);
  REQUIRE(seq.frames.size() == 2);
  REQUIRE(seq.height() == 64);
  REQUIRE(seq.width() == 64);
  REQUIRE(seq.orig_h() == 24);
  REQUIRE(seq.orig_w() == 32);

  // truncated file: not a multiple of the frame size
  {
    std::ofstream out(file, std::ios::binary | std::ios::app);
    out.write("xx", 2);
  }
  REQUIRE_THROWS_WITH(
      load_sequence(file.string(), SequenceFormat::kRawYuv420, opts),
      Catch::Matchers::ContainsSubstring("truncated"));
}

TEST_CASE("training clip sampling: determinism, flip, bounds") {
  const fs::path dir = temp_dir("clip");
  write_toy_dataset(dir.string(), 99);
  FrameSequence seq = load_sequence((dir / "train" / "seq00").string(),
                                    SequenceFormat::kImageDir);

  Rng r1(7), r2(7);
  TrainingClip a = sample_training_clip(seq, 3, 128, r1);
  TrainingClip b = sample_training_clip(seq, 3, 128, r2);
  REQUIRE(a.start_index == b.start_index);
  REQUIRE(a.crop_row == b.crop_row);
  REQUIRE(a.crop_col == b.crop_col);
  REQUIRE(a.reversed == b.reversed);
  for (int k = 0; k < 3; ++k)
    REQUIRE(a.frames[k].pixels.v == b.frames[k].pixels.v);

  // start index ranges over {0..n-clip}
  Rng r3(11);
  bool saw_flip = false, saw_noflip = false;
  for (int it = 0; it < 50; ++it) {
    TrainingClip c = sample_training_clip(seq, 3, 128, r3);
    REQUIRE(c.start_index >= 0);
    REQUIRE(c.start_index <= static_cast<int>(seq.frames.size()) - 3);
    REQUIRE(c.frames[0].pixels.h == 128);
    REQUIRE(c.frames[0].pixels.w == 128);
    saw_flip = saw_flip || c.reversed;
    saw_noflip = saw_noflip || !c.reversed;
  }
  REQUIRE(saw_flip);
  REQUIRE(saw_noflip);

  // reversal produces exactly the reversed frame order
  Rng r4(13);
  for (int it = 0; it < 20; ++it) {
    TrainingClip c = sample_training_clip(seq, 5, 128, r4);
    if (!c.reversed) continue;
    for (int k = 0; k < 5; ++k) {
      const Frame& src = seq.frames[c.start_index + 4 - k];
      const float want =
          src.pixels.at(0, 0, c.crop_row, c.crop_col);
      REQUIRE(c.frames[k].pixels.at(0, 0, 0, 0) == want);
    }
    break;
  }

  // crop == frame size -> only one window
  FrameSequence small;
  for (int i = 0; i < 4; ++i) {
    Tensor rgb(1, 3, 64, 64);
    small.frames.push_back(pad_frame(rgb, Provenance::kOriginal));
  }
  Rng r5(17);
  TrainingClip c = sample_training_clip(small, 3, 64, r5);
  REQUIRE(c.crop_row == 0);
  REQUIRE(c.crop_col == 0);

  REQUIRE_THROWS(sample_training_clip(small, 5, 64, r5));  // too short? no: 4 < 5
}

TEST_CASE("loaded toy frames satisfy frame invariants (corpus property)") {
  const fs::path dir = temp_dir("prop");
  write_toy_dataset(dir.string(), 3);
  for (const auto& sub : {"train/seq01", "eval/seq00", "heldout/seq00"}) {
    FrameSequence seq =
        load_sequence((dir / sub).string(), SequenceFormat::kImageDir);
    REQUIRE(!seq.frames.empty());
    REQUIRE(seq.height() % 64 == 0);
    REQUIRE(seq.width() % 64 == 0);
    REQUIRE(seq.height() >= 64);
    for (const auto& f : seq.frames) {
      REQUIRE(f.pixels.h == seq.height());
      REQUIRE(f.pixels.w == seq.width());
      for (float v : f.pixels.v) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= 1.0f);
      }
    }
  }
}
