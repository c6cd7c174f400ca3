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

#ifndef HBVC_MEDIA_IO_HPP_
#define HBVC_MEDIA_IO_HPP_

#include <string>
#include <vector>

#include "hbvc/tensor.hpp"

namespace hbvc {

// Where a frame's pixels came from. B-frame coding must only ever reference
// decoded frames; the coder asserts on this tag.
enum class Provenance { kOriginal, kDecoded };

// One RGB frame, values in [0,1], padded so height and width are multiples
// of 64. The pre-padding size is kept for cropping after decode.
struct Frame {
  Tensor pixels;  // (1,3,H,W)
  int orig_h = 0, orig_w = 0;
  Provenance origin = Provenance::kOriginal;

  int height() const { return pixels.h; }
  int width() const { return pixels.w; }
};

struct FrameSequence {
  std::vector<Frame> frames;
  double frame_rate = 25.0;  // metadata only

  int height() const { return frames.at(0).height(); }
  int width() const { return frames.at(0).width(); }
  int orig_h() const { return frames.at(0).orig_h; }
  int orig_w() const { return frames.at(0).orig_w; }
};

struct TrainingClip {
  std::vector<Frame> frames;  // crop x crop, consecutive or exactly reversed
  int crop_row = 0, crop_col = 0;
  int start_index = 0;
  bool reversed = false;
};

enum class SequenceFormat { kImageDir, kRawYuv420 };

struct LoadOptions {
  int width = 0, height = 0;  // required for raw YUV
  double frame_rate = 25.0;
};

int pad_to_multiple_of_64(int x);

// Edge-replication padding; records the original size in the Frame.
Frame pad_frame(const Tensor& rgb, Provenance origin);

FrameSequence load_sequence(const std::string& path, SequenceFormat format,
                            const LoadOptions& opts = {});
void write_sequence(const FrameSequence& seq, const std::string& path,
                    SequenceFormat format);

TrainingClip sample_training_clip(const FrameSequence& seq, int clip_len,
                                  int crop, Rng& rng);

// Round-half-up 8-bit quantization used everywhere pixels leave float space.
uint8_t quantize_8bit(float x);

// 8-bit PPM (P6) I/O for a single frame.
Tensor read_ppm(const std::string& path);
void write_ppm(const std::string& path, const Tensor& rgb);

// Raw float32 frame dump (for bit-exact cross-process comparison).
void write_raw_float(const std::string& path, const Tensor& rgb);
Tensor read_raw_float(const std::string& path);

}  // namespace hbvc

#endif  // HBVC_MEDIA_IO_HPP_
