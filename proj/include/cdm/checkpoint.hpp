#pragma once

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cdm/errors.hpp"
#include "cdm/model.hpp"

namespace cdm {

// Self-describing parameter container: a text header (format version,
// metadata lines, tensor names with dims), a "data" marker, then
// little-endian float32 payloads in header order. Round trip is bit-exact.
struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  CdNetParams<float> params;
  int epoch = 0;
  double val_score = 0.0;
  unsigned seed = 0;
  std::string config_hash;
};

namespace detail {

struct NamedTensor {
  std::string name;
  std::vector<int> dims;
  std::vector<float>* data;
};

inline std::vector<NamedTensor> checkpoint_tensors(CdNetParams<float>& p) {
  return {
      {"branch1x1", {p.branch1x1.out_c, p.branch1x1.in_c, p.branch1x1.k,
                     p.branch1x1.k}, &p.branch1x1.weights},
      {"branch11x11", {p.branch11x11.out_c, p.branch11x11.in_c,
                       p.branch11x11.k, p.branch11x11.k},
       &p.branch11x11.weights},
      {"head1", {p.head1.out_c, p.head1.in_c, 1, 1}, &p.head1.weights},
      {"head2", {p.head2.out_c, p.head2.in_c, 1, 1}, &p.head2.weights},
      {"head3", {p.head3.out_c, p.head3.in_c, 1, 1}, &p.head3.weights},
      {"metric_l", {static_cast<int>(p.metric_l.size())}, &p.metric_l},
  };
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  Checkpoint copy = ckpt;  // non-const tensor views
  std::ostringstream header;
  header << "CDM-CHECKPOINT " << Checkpoint::kFormatVersion << "\n";
  header << "meta epoch " << ckpt.epoch << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", ckpt.val_score);
  header << "meta val_score " << buf << "\n";
  header << "meta seed " << ckpt.seed << "\n";
  header << "meta config_hash "
         << (ckpt.config_hash.empty() ? "-" : ckpt.config_hash) << "\n";
  auto tensors = detail::checkpoint_tensors(copy.params);
  for (const auto& t : tensors) {
    header << "tensor " << t.name << " f32";
    for (int d : t.dims) header << " " << d;
    header << "\n";
  }
  header << "data\n";

  const std::string tmp = path + ".tmp";
  std::ofstream out(tmp, std::ios::binary);
  if (!out) throw IoError("cannot open " + tmp + " for writing");
  out << header.str();
  for (const auto& t : tensors) {
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(t.data->data()),
              static_cast<std::streamsize>(t.data->size() * 4));
  }
  out.close();
  if (!out) {
    std::remove(tmp.c_str());
    throw IoError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot rename " + tmp + " to " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError("empty checkpoint " + path);
  {
    std::istringstream ls(line);
    std::string magic;
    int version = -1;
    ls >> magic >> version;
    if (magic != "CDM-CHECKPOINT")
      throw IoError("not a checkpoint file: " + path);
    if (version != Checkpoint::kFormatVersion)
      throw IoError("unsupported checkpoint version " +
                    std::to_string(version) + " (expected " +
                    std::to_string(Checkpoint::kFormatVersion) + ")");
  }

  Checkpoint ckpt;
  ckpt.params = build_cdnet<float>(0);
  auto tensors = detail::checkpoint_tensors(ckpt.params);
  std::vector<detail::NamedTensor*> order;

  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "data") break;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      if (key == "epoch") ls >> ckpt.epoch;
      else if (key == "val_score") ls >> ckpt.val_score;
      else if (key == "seed") ls >> ckpt.seed;
      else if (key == "config_hash") {
        ls >> ckpt.config_hash;
        if (ckpt.config_hash == "-") ckpt.config_hash.clear();
      }
      // Unknown metadata keys are ignored.
    } else if (kind == "tensor") {
      std::string name, dtype;
      ls >> name >> dtype;
      if (dtype != "f32")
        throw IoError("unsupported tensor dtype '" + dtype + "' in " + path);
      std::vector<int> dims;
      int d;
      while (ls >> d) dims.push_back(d);
      detail::NamedTensor* match = nullptr;
      for (auto& t : tensors)
        if (t.name == name) match = &t;
      if (!match)
        throw IoError("unknown tensor '" + name + "' in checkpoint " + path);
      if (dims != match->dims) {
        std::ostringstream msg;
        msg << "dimension mismatch for tensor '" << name << "' in " << path;
        throw DimensionError(msg.str());
      }
      order.push_back(match);
    } else {
      throw IoError("malformed checkpoint header line: " + line);
    }
  }
  if (order.size() != tensors.size())
    throw IoError("checkpoint " + path + " is missing tensors");

  for (auto* t : order) {
    in.read(reinterpret_cast<char*>(t->data->data()),
            static_cast<std::streamsize>(t->data->size() * 4));
    if (in.gcount() != static_cast<std::streamsize>(t->data->size() * 4))
      throw IoError("truncated checkpoint payload in " + path);
  }
  return ckpt;
}

}  // namespace cdm
