#include "mer/checkpoint.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <string_view>

namespace mer {
namespace {

constexpr std::string_view kMagic = "mer-checkpoint";
constexpr int kVersion = 1;

void put(std::string& out, double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, r.ptr);
}

class Reader {
 public:
  explicit Reader(const std::string& text) : in_(text) {}

  std::string word() {
    std::string w;
    if (!(in_ >> w)) throw ParseError("unexpected end of checkpoint", line());
    return w;
  }

  void expect(std::string_view keyword) {
    const std::string w = word();
    if (w != keyword) throw ParseError("expected '" + std::string(keyword) + "', found '" + w + "'", line());
  }

  bool at_end() {
    in_ >> std::ws;
    return in_.eof();
  }

  template <typename T>
  T number() {
    const std::string w = word();
    T value{};
    const auto r = std::from_chars(w.data(), w.data() + w.size(), value);
    if (r.ec != std::errc() || r.ptr != w.data() + w.size()) {
      throw ParseError("bad number '" + w + "' in checkpoint", line());
    }
    return value;
  }

 private:
  std::size_t line() {
    // Count newlines consumed so far for diagnostics.
    const auto pos = in_.tellg();
    if (pos < 0) return 0;
    const std::string& s = in_.str();
    return 1 + static_cast<std::size_t>(std::count(s.begin(), s.begin() + pos, '\n'));
  }

  std::istringstream in_;
};

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  const ModelParams& p = ckpt.params;
  std::string out;
  out += std::string(kMagic) + " " + std::to_string(kVersion) + "\n";
  out += "input_dim " + std::to_string(p.input_dim) + "\n";
  out += "hidden_dim " + std::to_string(p.hidden_dim) + "\n";
  out += "class_count " + std::to_string(p.class_count) + "\n";
  out += "seed " + std::to_string(ckpt.seed) + "\n";
  out += "epoch " + std::to_string(ckpt.epoch) + "\n";
  out += "layers " + std::to_string(p.layers.size()) + "\n";
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    const auto& layer = p.layers[k];
    out += "weight " + std::to_string(k) + " " + std::to_string(layer.weight.rows()) + " " +
           std::to_string(layer.weight.cols()) + "\n";
    for (Eigen::Index i = 0; i < layer.weight.rows(); ++i) {
      for (Eigen::Index j = 0; j < layer.weight.cols(); ++j) {
        if (j > 0) out += ' ';
        put(out, layer.weight(i, j));
      }
      out += '\n';
    }
    out += "bias " + std::to_string(k) + " " + std::to_string(layer.bias.size()) + "\n";
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
      if (i > 0) out += ' ';
      put(out, layer.bias(i));
    }
    out += '\n';
  }
  out += "end\n";
  return out;
}

Checkpoint parse_checkpoint(const std::string& text) {
  Reader r(text);
  r.expect(kMagic);
  if (const int version = r.number<int>(); version != kVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 1);
  }
  Checkpoint ckpt;
  r.expect("input_dim");
  const auto input_dim = r.number<std::size_t>();
  r.expect("hidden_dim");
  const auto hidden_dim = r.number<std::size_t>();
  r.expect("class_count");
  const auto class_count = r.number<std::size_t>();
  r.expect("seed");
  ckpt.seed = r.number<std::uint64_t>();
  r.expect("epoch");
  ckpt.epoch = r.number<std::size_t>();
  ckpt.params = ModelParams::zeros(input_dim, hidden_dim, class_count);

  r.expect("layers");
  if (r.number<std::size_t>() != ckpt.params.layers.size()) {
    throw ParseError("layer count does not match the declared dimensions", 0);
  }
  for (std::size_t k = 0; k < ckpt.params.layers.size(); ++k) {
    auto& layer = ckpt.params.layers[k];
    r.expect("weight");
    if (r.number<std::size_t>() != k) throw ParseError("layers out of order", 0);
    const auto rows = r.number<Eigen::Index>();
    const auto cols = r.number<Eigen::Index>();
    if (rows != layer.weight.rows() || cols != layer.weight.cols()) {
      throw ParseError("weight " + std::to_string(k) + " has unexpected shape", 0);
    }
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index j = 0; j < cols; ++j) layer.weight(i, j) = r.number<double>();
    }
    r.expect("bias");
    if (r.number<std::size_t>() != k) throw ParseError("layers out of order", 0);
    if (r.number<Eigen::Index>() != layer.bias.size()) {
      throw ParseError("bias " + std::to_string(k) + " has unexpected size", 0);
    }
    for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = r.number<double>();
  }
  r.expect("end");
  if (!r.at_end()) throw ParseError("trailing content after 'end'", 0);
  if (!ckpt.params.all_finite()) throw ParseError("checkpoint holds non-finite parameters", 0);
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write checkpoint " + path.string());
  out << serialize_checkpoint(ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open checkpoint " + path.string(), 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_checkpoint(buf.str());
}

}  // namespace mer
