#pragma once

#include <cstdint>
#include <cstring>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "anchorscene/io.hpp"
#include "anchorscene/nnet.hpp"

namespace ancs {

// Versioned binary model container. Layout:
//   magic "ANCREC01"
//   u32 net count, then per net:
//     name, u32 layer count, per layer: u32 rows, u32 cols, u32 activation,
//     W row-major doubles, b doubles
//     u8 has_adam; if set: u64 t, per layer mW, vW (row-major), mb, vb
//   u32 vector count, per vector: name, u64 size, doubles,
//     u8 has_adam; if set: u64 t, m doubles, v doubles
//   u32 meta count, per entry: key string, value string
struct Checkpoint {
  static constexpr char kMagic[9] = "ANCREC01";

  std::map<std::string, DenseNet> nets;
  std::map<std::string, Eigen::VectorXd> vectors;
  std::map<std::string, AdamVector> vector_adam;
  std::map<std::string, std::string> meta;

  std::string encode() const {
    std::string out;
    out.append(kMagic, 8);
    put_u32(out, static_cast<std::uint32_t>(nets.size()));
    for (const auto& [name, net] : nets) {
      put_string(out, name);
      put_u32(out, static_cast<std::uint32_t>(net.layers().size()));
      for (const auto& layer : net.layers()) {
        put_u32(out, static_cast<std::uint32_t>(layer.W.rows()));
        put_u32(out, static_cast<std::uint32_t>(layer.W.cols()));
        put_u32(out, static_cast<std::uint32_t>(layer.act));
        put_matrix_rowmajor(out, layer.W);
        put_doubles(out, layer.b.data(), layer.b.size());
      }
      out.push_back(net.has_adam_state() ? 1 : 0);
      if (net.has_adam_state()) {
        put_u64(out, static_cast<std::uint64_t>(net.adam_t()));
        for (std::size_t l = 0; l < net.layers().size(); ++l) {
          put_matrix_rowmajor(out, net.adam_mw()[l]);
          put_matrix_rowmajor(out, net.adam_vw()[l]);
          put_doubles(out, net.adam_mb()[l].data(), net.adam_mb()[l].size());
          put_doubles(out, net.adam_vb()[l].data(), net.adam_vb()[l].size());
        }
      }
    }
    put_u32(out, static_cast<std::uint32_t>(vectors.size()));
    for (const auto& [name, vec] : vectors) {
      put_string(out, name);
      put_u64(out, static_cast<std::uint64_t>(vec.size()));
      put_doubles(out, vec.data(), vec.size());
      auto it = vector_adam.find(name);
      const bool has = it != vector_adam.end() && it->second.m.size() == vec.size();
      out.push_back(has ? 1 : 0);
      if (has) {
        put_u64(out, static_cast<std::uint64_t>(it->second.t));
        put_doubles(out, it->second.m.data(), it->second.m.size());
        put_doubles(out, it->second.v.data(), it->second.v.size());
      }
    }
    put_u32(out, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      put_string(out, k);
      put_string(out, v);
    }
    return out;
  }

  static Checkpoint decode(const std::string& blob) {
    Checkpoint ck;
    std::size_t pos = 0;
    char magic[8];
    take(blob, pos, magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0)
      throw std::runtime_error("not a model checkpoint (bad magic)");
    const std::uint32_t n_nets = take_u32(blob, pos);
    for (std::uint32_t i = 0; i < n_nets; ++i) {
      const std::string name = take_string(blob, pos);
      DenseNet net;
      const std::uint32_t n_layers = take_u32(blob, pos);
      for (std::uint32_t l = 0; l < n_layers; ++l) {
        DenseNet::Layer layer;
        const std::uint32_t rows = take_u32(blob, pos);
        const std::uint32_t cols = take_u32(blob, pos);
        layer.act = static_cast<Activation>(take_u32(blob, pos));
        layer.W = take_matrix_rowmajor(blob, pos, rows, cols);
        layer.b.resize(rows);
        take_doubles(blob, pos, layer.b.data(), rows);
        net.layers().push_back(std::move(layer));
      }
      std::uint8_t has_adam;
      take(blob, pos, &has_adam, 1);
      if (has_adam) {
        net.set_adam_t(static_cast<long>(take_u64(blob, pos)));
        for (std::uint32_t l = 0; l < n_layers; ++l) {
          const auto& L = net.layers()[l];
          net.adam_mw()[l] = take_matrix_rowmajor(blob, pos, L.W.rows(), L.W.cols());
          net.adam_vw()[l] = take_matrix_rowmajor(blob, pos, L.W.rows(), L.W.cols());
          take_doubles(blob, pos, net.adam_mb()[l].data(), L.b.size());
          take_doubles(blob, pos, net.adam_vb()[l].data(), L.b.size());
        }
      }
      ck.nets.emplace(name, std::move(net));
    }
    const std::uint32_t n_vecs = take_u32(blob, pos);
    for (std::uint32_t i = 0; i < n_vecs; ++i) {
      const std::string name = take_string(blob, pos);
      const std::uint64_t size = take_u64(blob, pos);
      Eigen::VectorXd vec(size);
      take_doubles(blob, pos, vec.data(), static_cast<Eigen::Index>(size));
      std::uint8_t has_adam;
      take(blob, pos, &has_adam, 1);
      if (has_adam) {
        AdamVector av;
        av.t = static_cast<long>(take_u64(blob, pos));
        av.m.resize(size);
        av.v.resize(size);
        take_doubles(blob, pos, av.m.data(), static_cast<Eigen::Index>(size));
        take_doubles(blob, pos, av.v.data(), static_cast<Eigen::Index>(size));
        ck.vector_adam.emplace(name, std::move(av));
      }
      ck.vectors.emplace(name, std::move(vec));
    }
    const std::uint32_t n_meta = take_u32(blob, pos);
    for (std::uint32_t i = 0; i < n_meta; ++i) {
      const std::string k = take_string(blob, pos);
      ck.meta[k] = take_string(blob, pos);
    }
    return ck;
  }

  void save(const fs::path& path) const { atomic_write_file(path, encode()); }

  static Checkpoint load(const fs::path& path) {
    return decode(read_file(path));
  }

  /// Human-readable mirror of the container for debugging.
  nlohmann::json debug_json() const {
    nlohmann::json j;
    j["format"] = std::string(kMagic, 8);
    for (const auto& [name, net] : nets) {
      nlohmann::json nj;
      for (const auto& layer : net.layers()) {
        nlohmann::json lj;
        lj["rows"] = layer.W.rows();
        lj["cols"] = layer.W.cols();
        lj["activation"] = activation_name(layer.act);
        std::vector<double> w(layer.W.size());
        for (Eigen::Index r = 0; r < layer.W.rows(); ++r)
          for (Eigen::Index c = 0; c < layer.W.cols(); ++c)
            w[r * layer.W.cols() + c] = layer.W(r, c);
        lj["weights_rowmajor"] = w;
        lj["bias"] = std::vector<double>(layer.b.data(), layer.b.data() + layer.b.size());
        nj["layers"].push_back(lj);
      }
      nj["adam_t"] = net.adam_t();
      j["nets"][name] = nj;
    }
    for (const auto& [name, vec] : vectors)
      j["vectors"][name] =
          std::vector<double>(vec.data(), vec.data() + vec.size());
    j["meta"] = meta;
    return j;
  }

 private:
  static void put_u32(std::string& out, std::uint32_t v) {
    out.append(reinterpret_cast<const char*>(&v), 4);
  }
  static void put_u64(std::string& out, std::uint64_t v) {
    out.append(reinterpret_cast<const char*>(&v), 8);
  }
  static void put_string(std::string& out, const std::string& s) {
    put_u32(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
  }
  static void put_doubles(std::string& out, const double* p, Eigen::Index n) {
    out.append(reinterpret_cast<const char*>(p), sizeof(double) * n);
  }
  static void put_matrix_rowmajor(std::string& out, const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        const double v = m(r, c);
        out.append(reinterpret_cast<const char*>(&v), sizeof(double));
      }
  }
  static void take(const std::string& blob, std::size_t& pos, void* dst,
                   std::size_t n) {
    if (pos + n > blob.size()) throw std::runtime_error("truncated checkpoint");
    std::memcpy(dst, blob.data() + pos, n);
    pos += n;
  }
  static std::uint32_t take_u32(const std::string& blob, std::size_t& pos) {
    std::uint32_t v;
    take(blob, pos, &v, 4);
    return v;
  }
  static std::uint64_t take_u64(const std::string& blob, std::size_t& pos) {
    std::uint64_t v;
    take(blob, pos, &v, 8);
    return v;
  }
  static std::string take_string(const std::string& blob, std::size_t& pos) {
    const std::uint32_t n = take_u32(blob, pos);
    if (pos + n > blob.size()) throw std::runtime_error("truncated checkpoint");
    std::string s = blob.substr(pos, n);
    pos += n;
    return s;
  }
  static void take_doubles(const std::string& blob, std::size_t& pos,
                           double* dst, Eigen::Index n) {
    take(blob, pos, dst, sizeof(double) * n);
  }
  static Eigen::MatrixXd take_matrix_rowmajor(const std::string& blob,
                                              std::size_t& pos,
                                              Eigen::Index rows,
                                              Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        double v;
        take(blob, pos, &v, sizeof(double));
        m(r, c) = v;
      }
    return m;
  }
};

}  // namespace ancs
