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

#ifndef HBVC_TOYGEN_HPP_
#define HBVC_TOYGEN_HPP_

#include <string>

#include "hbvc/media_io.hpp"

namespace hbvc {

// Synthetic video generator for smoke training and evaluation. All motion
// in train/val/eval content is translational; the held-out directory uses
// rotation+zoom so its motion statistics differ from the training corpus.
//
// Layout written under `root`:
//   train/seq00..seq05   192x128, 16 frames, translating patterns
//   val/seq00..seq01     192x128, 16 frames
//   eval/seq00..seq01    128x128, 17 frames
//   heldout/seq00        128x128, 17 frames, rotation+zoom
void write_toy_dataset(const std::string& root, uint64_t seed);

// One synthetic frame (values in [0,1]); exposed for tests.
Tensor render_toy_frame(const std::string& kind, int width, int height, int t,
                        uint64_t seed);

}  // namespace hbvc

#endif  // HBVC_TOYGEN_HPP_
