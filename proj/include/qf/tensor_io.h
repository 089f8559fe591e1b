// Copyright 2026 The qfake Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef QF_TENSOR_IO_H_
#define QF_TENSOR_IO_H_

#include <cstdint>
#include <filesystem>
#include <string>

#include "qf/tensor.h"

namespace qf {

// Tensor container layout:
//   bytes 0..7   magic "QTNSR\0\0\1"
//   bytes 8..11  header length L, little-endian uint32
//   next L bytes UTF-8 JSON {"dtype":"f64","shape":[...]}
//   remainder    numel little-endian IEEE-754 doubles, row-major
inline constexpr char kTensorMagic[8] = {'Q', 'T', 'N', 'S', 'R', 0, 0, 1};

std::string EncodeTensor(const Tensor& tensor);
Tensor DecodeTensor(const std::string& bytes);

void SaveTensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor LoadTensor(const std::filesystem::path& path);

// Whole-file helpers shared by the container readers and writers.
std::string ReadFileBytes(const std::filesystem::path& path);
void WriteFileBytes(const std::filesystem::path& path, const std::string& bytes);

}  // namespace qf

#endif  // QF_TENSOR_IO_H_
