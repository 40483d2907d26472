// Copyright 2026 The LMoE Authors
// SPDX-License-Identifier: Apache-2.0

#include "lmoe/bench/dataset.hpp"

#include <zlib.h>

#include <cmath>
#include <fstream>
#include <json.hpp>
#include <string>

#include "lmoe/core/error.hpp"

namespace lmoe::bench {
namespace {

using nlohmann::json;

std::string encode_image(const encoder::ObservationImage& img) {
  const auto& px = img.pixels;
  std::vector<unsigned char> raw(px.numel());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const double q = std::round(px[i] * 255.0);
    if (q < 0.0 || q > 255.0 || q / 255.0 != px[i]) {
      throw IoError("dataset_save: image value " + std::to_string(px[i]) +
                    " is not an 8-bit level");
    }
    raw[i] = static_cast<unsigned char>(q);
  }
  uLongf len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> packed(len);
  if (compress2(packed.data(), &len, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK) {
    throw IoError("dataset_save: image compression failed");
  }
  static const char* kHex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (uLongf i = 0; i < len; ++i) {
    out.push_back(kHex[packed[i] >> 4]);
    out.push_back(kHex[packed[i] & 15]);
  }
  return out;
}

encoder::ObservationImage decode_image(const std::string& hex, std::size_t size) {
  if (hex.size() % 2 != 0) throw IoError("odd-length image payload");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw IoError("bad hex digit in image payload");
  };
  std::vector<unsigned char> packed(hex.size() / 2);
  for (std::size_t i = 0; i < packed.size(); ++i) {
    packed[i] = static_cast<unsigned char>(nibble(hex[2 * i]) * 16 + nibble(hex[2 * i + 1]));
  }
  encoder::ObservationImage img(size, size);
  std::vector<unsigned char> raw(img.pixels.numel());
  uLongf len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &len, packed.data(), static_cast<uLong>(packed.size())) != Z_OK ||
      len != raw.size()) {
    throw IoError("corrupt image payload");
  }
  for (std::size_t i = 0; i < raw.size(); ++i) img.pixels[i] = raw[i] / 255.0;
  return img;
}

Tensor tensor_from(const json& j, std::size_t n, const char* what) {
  if (!j.is_array() || j.size() != n) {
    throw IoError(std::string(what) + " must be an array of " + std::to_string(n) + " numbers");
  }
  std::vector<double> v;
  for (const auto& x : j) v.push_back(x.get<double>());
  return Tensor::vector(std::move(v));
}

json to_json(const Episode& ep) {
  json steps = json::array();
  for (const auto& s : ep.steps) {
    steps.push_back({{"image", encode_image(s.image)},
                     {"proprio", s.proprio.vec()},
                     {"action", s.action.vec()}});
  }
  return {{"schema_version", ep.schema_version},
          {"task_id", ep.task_id},
          {"instruction", ep.instruction},
          {"seed", ep.seed},
          {"mode", ep.mode == DetourMode::kLeft ? "left" : "right"},
          {"image_size", world::kImageSize},
          {"steps", std::move(steps)}};
}

Episode from_json(const json& j) {
  Episode ep;
  ep.schema_version = j.at("schema_version").get<std::string>();
  if (ep.schema_version != kDatasetSchema) {
    throw SchemaError("unsupported schema_version \"" + ep.schema_version + "\" (expected \"" +
                      kDatasetSchema + "\")");
  }
  ep.task_id = j.at("task_id").get<std::size_t>();
  ep.instruction = j.at("instruction").get<std::string>();
  ep.seed = j.at("seed").get<std::uint64_t>();
  const auto mode = j.at("mode").get<std::string>();
  if (mode != "left" && mode != "right") throw IoError("mode must be left or right");
  ep.mode = mode == "left" ? DetourMode::kLeft : DetourMode::kRight;
  const auto size = j.at("image_size").get<std::size_t>();
  for (const auto& s : j.at("steps")) {
    ep.steps.push_back({decode_image(s.at("image").get<std::string>(), size),
                        tensor_from(s.at("proprio"), world::kProprioDim, "proprio"),
                        tensor_from(s.at("action"), world::kActionDim, "action")});
  }
  if (ep.steps.empty()) throw IoError("episode has no steps");
  return ep;
}

}  // namespace

void dataset_save(const std::filesystem::path& path, const std::vector<Episode>& episodes) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& ep : episodes) out << to_json(ep).dump() << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<Episode> dataset_load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset " + path.string());
  std::vector<Episode> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.string() + " line " + std::to_string(lineno) + ": ";
    try {
      out.push_back(from_json(json::parse(line)));
    } catch (const SchemaError& e) {
      throw SchemaError(where + e.what());
    } catch (const std::exception& e) {
      throw IoError(where + e.what());
    }
  }
  return out;
}

std::uint64_t demo_seed(std::uint64_t dataset_seed, std::size_t demo) {
  return dataset_seed * 100003ULL + 1000ULL * demo;
}

std::vector<Episode> generate_dataset(std::size_t n_tasks, std::size_t n_demos,
                                      std::uint64_t seed, std::size_t* retries) {
  if (n_tasks == 0 || n_tasks > tasks().size()) {
    throw ConfigError("gen-data: tasks must be in [1, " + std::to_string(tasks().size()) + "]");
  }
  std::vector<Episode> out;
  std::size_t extra = 0;
  for (std::size_t t = 0; t < n_tasks; ++t) {
    for (std::size_t j = 0; j < n_demos; ++j) {
      std::size_t attempts = 0;
      out.push_back(generate_demo(tasks()[t], demo_seed(seed, j), &attempts));
      extra += attempts - 1;
    }
  }
  if (retries) *retries = extra;
  return out;
}

ActionNormalizer ActionNormalizer::fit(const std::vector<Episode>& episodes) {
  ActionNormalizer n;
  n.lo.fill(INFINITY);
  n.hi.fill(-INFINITY);
  for (const auto& ep : episodes) {
    for (const auto& s : ep.steps) {
      for (std::size_t d = 0; d < world::kActionDim; ++d) {
        n.lo[d] = std::min(n.lo[d], s.action[d]);
        n.hi[d] = std::max(n.hi[d], s.action[d]);
      }
    }
  }
  if (episodes.empty()) throw InvalidInput("ActionNormalizer: empty dataset");
  return n;
}

double ActionNormalizer::normalize(std::size_t d, double v) const {
  const double span = hi[d] - lo[d];
  if (span <= 0.0) return v - lo[d];
  return 2.0 * (v - lo[d]) / span - 1.0;
}

double ActionNormalizer::denormalize(std::size_t d, double v) const {
  const double span = hi[d] - lo[d];
  if (span <= 0.0) return v + lo[d];
  return lo[d] + (v + 1.0) * 0.5 * span;
}

}  // namespace lmoe::bench
