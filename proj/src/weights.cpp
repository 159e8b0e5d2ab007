// Copyright 2026 The diffserve Authors
// SPDX-License-Identifier: Apache-2.0

#include "diffserve/weights.hpp"

#include <zlib.h>

#include <bit>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "diffserve/errors.hpp"

namespace diffserve {

namespace fs = std::filesystem;
using nlohmann::json;

void WeightStore::add(std::string name, Tensor tensor) {
  if (index_.contains(name)) throw InvalidArgument("duplicate weight name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

bool WeightStore::contains(std::string_view name) const { return index_.contains(std::string(name)); }

const Tensor& WeightStore::get(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw NotFound("no weight named '" + std::string(name) + "'");
  return entries_[it->second].second;
}

Tensor& WeightStore::get_mutable(std::string_view name) {
  return const_cast<Tensor&>(static_cast<const WeightStore&>(*this).get(name));
}

std::size_t WeightStore::param_count() const noexcept {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.numel();
  return n;
}

std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - off, 1u << 30));
    crc = ::crc32(crc, bytes.data() + off, chunk);
    off += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

namespace {

std::string checksum_string(std::uint32_t crc) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%08x", crc);
  return std::string("crc32:") + buf;
}

void append_le(std::vector<std::uint8_t>& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

float read_le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

}  // namespace

fs::path save_weight_file(const fs::path& dir, const std::string& stem, const std::string& model_kind,
                          const json& config, const WeightStore& weights) {
  fs::create_directories(dir);
  std::vector<std::uint8_t> blob;
  blob.reserve(weights.param_count() * sizeof(float));
  json tensors = json::array();
  for (const auto& [name, t] : weights.entries()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"byte_offset", blob.size()}});
    for (float v : t.data()) append_le(blob, v);
  }
  const std::string blob_name = stem + ".bin";
  {
    std::ofstream out(dir / blob_name, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (!out) throw FormatError("failed writing " + (dir / blob_name).string());
  }
  json manifest = {{"format_version", kWeightFormatVersion},
                   {"model_kind", model_kind},
                   {"config", config},
                   {"blob", blob_name},
                   {"blob_checksum", checksum_string(crc32_of(blob))},
                   {"tensors", tensors}};
  const fs::path manifest_path = dir / (stem + ".json");
  std::ofstream out(manifest_path, std::ios::trunc);
  out << manifest.dump(2) << '\n';
  if (!out) throw FormatError("failed writing " + manifest_path.string());
  return manifest_path;
}

WeightFile load_weight_file(const fs::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw FormatError("cannot open manifest " + manifest_path.string());
  json manifest;
  try {
    manifest = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest " + manifest_path.string() + " is not valid JSON: " + e.what());
  }
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version != kWeightFormatVersion) {
      throw FormatError("unknown format_version " + std::to_string(version) + " in " + manifest_path.string());
    }
    const fs::path blob_path = manifest_path.parent_path() / manifest.at("blob").get<std::string>();
    std::ifstream bin(blob_path, std::ios::binary);
    if (!bin) throw FormatError("cannot open blob " + blob_path.string());
    std::vector<std::uint8_t> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

    const std::string expected = manifest.at("blob_checksum").get<std::string>();
    if (checksum_string(crc32_of(blob)) != expected) {
      throw FormatError("checksum mismatch for " + blob_path.string() + ": manifest says " + expected +
                        ", blob hashes to " + checksum_string(crc32_of(blob)));
    }

    WeightFile file;
    file.model_kind = manifest.at("model_kind").get<std::string>();
    file.config = manifest.at("config");
    std::size_t expected_offset = 0;
    for (const auto& entry : manifest.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("byte_offset").get<std::size_t>();
      if (offset != expected_offset) {
        throw FormatError("tensor '" + name + "' at byte_offset " + std::to_string(offset) + ", expected " +
                          std::to_string(expected_offset) + " (offsets must be ascending and packed)");
      }
      const auto count = static_cast<std::size_t>(numel_of(shape));
      if (offset + count * 4 > blob.size()) {
        throw FormatError("tensor '" + name + "' runs past the end of the blob");
      }
      Tensor t(shape);
      for (std::size_t i = 0; i < count; ++i) t[i] = read_le(blob.data() + offset + 4 * i);
      file.weights.add(name, std::move(t));
      expected_offset = offset + count * 4;
    }
    if (expected_offset != blob.size()) {
      throw FormatError("blob holds " + std::to_string(blob.size()) + " bytes but tensors cover " +
                        std::to_string(expected_offset));
    }
    return file;
  } catch (const json::exception& e) {
    throw FormatError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
}

}  // namespace diffserve
