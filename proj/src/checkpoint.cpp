#include "disarm/checkpoint.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace disarm {

namespace {

constexpr std::array<char, 8> kMagic{'D', 'I', 'S', 'A', 'R', 'M', 'C', 'K'};

enum class EntryKind : std::uint8_t { network = 0, vector = 1 };

class Writer {
 public:
  void bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out_.insert(out_.end(), p, p + n);
  }
  template <typename T>
  void le(T value) {
    static_assert(std::is_unsigned_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      out_.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
    }
  }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  void need(std::size_t n) const {
    if (size_ - pos_ < n) {
      throw CheckpointError("checkpoint truncated at byte offset " + std::to_string(pos_));
    }
  }
  template <typename T>
  T le() {
    need(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(data_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return v;
  }
  double f64() { return std::bit_cast<double>(le<std::uint64_t>()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

}  // namespace

const DenseNetwork& Checkpoint::network(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) {
      if (const auto* net = std::get_if<DenseNetwork>(&e.value)) return *net;
    }
  }
  throw CheckpointError("checkpoint has no network named '" + name + "'");
}

const Eigen::VectorXd& Checkpoint::vector(const std::string& name) const {
  for (const auto& e : entries) {
    if (e.name == name) {
      if (const auto* v = std::get_if<Eigen::VectorXd>(&e.value)) return *v;
    }
  }
  throw CheckpointError("checkpoint has no vector named '" + name + "'");
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  Writer w;
  w.bytes(kMagic.data(), kMagic.size());
  w.le(kCheckpointVersion);
  w.le(checkpoint.step);
  w.le(static_cast<std::uint32_t>(checkpoint.entries.size()));
  for (const auto& e : checkpoint.entries) {
    w.le(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    if (const auto* net = std::get_if<DenseNetwork>(&e.value)) {
      w.le(static_cast<std::uint8_t>(EntryKind::network));
      w.le(static_cast<std::uint32_t>(net->layers().size()));
      for (const auto& layer : net->layers()) {
        w.le(static_cast<std::uint64_t>(layer.weight.rows()));
        w.le(static_cast<std::uint64_t>(layer.weight.cols()));
        w.le(static_cast<std::uint8_t>(layer.activation));
        w.f64(layer.slope);
      }
    } else {
      const auto& v = std::get<Eigen::VectorXd>(e.value);
      w.le(static_cast<std::uint8_t>(EntryKind::vector));
      w.le(static_cast<std::uint64_t>(v.size()));
    }
  }
  for (const auto& e : checkpoint.entries) {
    if (const auto* net = std::get_if<DenseNetwork>(&e.value)) {
      for (const auto& layer : net->layers()) {
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) w.f64(layer.weight.data()[i]);
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) w.f64(layer.bias(i));
      }
    } else {
      const auto& v = std::get<Eigen::VectorXd>(e.value);
      for (Eigen::Index i = 0; i < v.size(); ++i) w.f64(v(i));
    }
  }
  auto& buf = w.buffer();
  const std::uint32_t sum = crc(buf.data(), buf.size());
  w.le(sum);
  return std::move(buf);
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kMagic.size() + 4) {
    throw CheckpointError("checkpoint truncated at byte offset " + std::to_string(bytes.size()));
  }
  const std::size_t body = bytes.size() - 4;
  Reader tail(bytes.data() + body, 4);
  if (tail.le<std::uint32_t>() != crc(bytes.data(), body)) {
    throw CheckpointError("checkpoint checksum mismatch");
  }
  Reader r(bytes.data(), body);
  if (r.str(kMagic.size()) != std::string(kMagic.data(), kMagic.size())) {
    throw CheckpointError("checkpoint: bad magic");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint cp;
  cp.step = r.le<std::uint64_t>();
  const auto count = r.le<std::uint32_t>();

  struct Shape {
    std::string name;
    EntryKind kind;
    std::vector<DenseLayer> layers;
    std::uint64_t length = 0;
  };
  std::vector<Shape> shapes;
  for (std::uint32_t k = 0; k < count; ++k) {
    Shape s;
    s.name = r.str(r.le<std::uint32_t>());
    const auto kind = r.le<std::uint8_t>();
    if (kind > 1) throw CheckpointError("checkpoint: unknown entry kind at offset " + std::to_string(r.pos() - 1));
    s.kind = static_cast<EntryKind>(kind);
    if (s.kind == EntryKind::network) {
      const auto layers = r.le<std::uint32_t>();
      for (std::uint32_t l = 0; l < layers; ++l) {
        DenseLayer layer;
        const auto rows = r.le<std::uint64_t>();
        const auto cols = r.le<std::uint64_t>();
        const auto act = r.le<std::uint8_t>();
        if (act > 1) throw CheckpointError("checkpoint: unknown activation");
        layer.activation = static_cast<Activation>(act);
        layer.slope = r.f64();
        if (rows > (1U << 24) || cols > (1U << 24)) throw CheckpointError("checkpoint: implausible layer shape");
        layer.weight.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        layer.bias.resize(static_cast<Eigen::Index>(rows));
        s.layers.push_back(std::move(layer));
      }
    } else {
      s.length = r.le<std::uint64_t>();
      if (s.length > (1U << 30)) throw CheckpointError("checkpoint: implausible vector length");
    }
    shapes.push_back(std::move(s));
  }
  for (auto& s : shapes) {
    if (s.kind == EntryKind::network) {
      for (auto& layer : s.layers) {
        for (Eigen::Index i = 0; i < layer.weight.size(); ++i) layer.weight.data()[i] = r.f64();
        for (Eigen::Index i = 0; i < layer.bias.size(); ++i) layer.bias(i) = r.f64();
      }
      cp.entries.push_back({s.name, DenseNetwork(std::move(s.layers))});
    } else {
      Eigen::VectorXd v(static_cast<Eigen::Index>(s.length));
      for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = r.f64();
      cp.entries.push_back({s.name, std::move(v)});
    }
  }
  if (r.pos() != body) {
    throw CheckpointError("checkpoint: trailing bytes at offset " + std::to_string(r.pos()));
  }
  return cp;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  const auto bytes = encode_checkpoint(checkpoint);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace disarm
