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

#include "qf/tensor_io.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "qf/error.h"

namespace qf {
namespace {

constexpr std::size_t kMagicSize = sizeof(kTensorMagic);

void PutU32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t GetU32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void PutF64(std::string& out, double d) {
  auto bits = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

double GetF64(const std::string& in, std::size_t at) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i)
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::string EncodeTensor(const Tensor& tensor) {
  nlohmann::json header;
  header["shape"] = tensor.shape();
  header["dtype"] = "f64";
  const std::string text = header.dump();
  std::string out(kTensorMagic, kMagicSize);
  PutU32(out, static_cast<std::uint32_t>(text.size()));
  out += text;
  out.reserve(out.size() + 8 * tensor.numel());
  for (double v : tensor.data()) PutF64(out, v);
  return out;
}

Tensor DecodeTensor(const std::string& bytes) {
  if (bytes.size() < kMagicSize + 4 ||
      std::memcmp(bytes.data(), kTensorMagic, kMagicSize) != 0) {
    throw Error(ErrorCode::kCorruptContainer, "bad tensor magic");
  }
  const std::size_t header_len = GetU32(bytes, kMagicSize);
  const std::size_t blob_at = kMagicSize + 4 + header_len;
  if (blob_at > bytes.size()) {
    throw Error(ErrorCode::kCorruptContainer, "truncated tensor header");
  }
  nlohmann::json header = nlohmann::json::parse(
      bytes.begin() + kMagicSize + 4, bytes.begin() + blob_at, nullptr,
      /*allow_exceptions=*/false);
  if (header.is_discarded() || !header.is_object() ||
      !header.contains("shape") || !header["shape"].is_array() ||
      header.value("dtype", "") != "f64") {
    throw Error(ErrorCode::kCorruptContainer, "malformed tensor header");
  }
  Shape shape;
  for (const auto& e : header["shape"]) {
    if (!e.is_number_unsigned() || e.get<std::size_t>() == 0) {
      throw Error(ErrorCode::kCorruptContainer, "bad extent in tensor header");
    }
    shape.push_back(e.get<std::size_t>());
  }
  if (shape.empty()) {
    throw Error(ErrorCode::kCorruptContainer, "empty shape in tensor header");
  }
  const std::size_t numel = ShapeNumel(shape);
  if (bytes.size() - blob_at != 8 * numel) {
    throw Error(ErrorCode::kCorruptContainer,
                "blob holds " + std::to_string(bytes.size() - blob_at) +
                    " bytes, shape " + ShapeToString(shape) + " needs " +
                    std::to_string(8 * numel));
  }
  std::vector<double> data(numel);
  for (std::size_t i = 0; i < numel; ++i) data[i] = GetF64(bytes, blob_at + 8 * i);
  return Tensor(std::move(shape), std::move(data));
}

std::string ReadFileBytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void WriteFileBytes(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "short write to " + path.string());
}

void SaveTensor(const std::filesystem::path& path, const Tensor& tensor) {
  WriteFileBytes(path, EncodeTensor(tensor));
}

Tensor LoadTensor(const std::filesystem::path& path) {
  return DecodeTensor(ReadFileBytes(path));
}

}  // namespace qf
