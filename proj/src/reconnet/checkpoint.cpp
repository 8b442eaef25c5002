#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "ear/error.hpp"
#include "ear/json_io.hpp"
#include "ear/reconnet.hpp"

namespace ear::nn {

namespace {

constexpr char kMagic[8] = {'E', 'A', 'R', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<unsigned char> take() { return std::move(out_); }

 private:
  std::vector<unsigned char> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> in) : in_(in) {}
  const unsigned char* take(std::size_t n) {
    if (in_.size() - pos_ < n) throw FormatError("checkpoint is truncated");
    const unsigned char* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint16_t u16() {
    const unsigned char* p = take(2);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }
  std::uint32_t u32() {
    const unsigned char* p = take(4);
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
  }
  float f32() { return std::bit_cast<float>(u32()); }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::span<const unsigned char> in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<unsigned char> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 8);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const NamedTensor& t : ckpt.tensors) {
    if (t.name.size() > 0xFFFF) throw ValueError("tensor name too long: " + t.name);
    if (t.dims.size() > 0xFF) throw ValueError("tensor rank too large: " + t.name);
    std::size_t count = 1;
    for (auto d : t.dims) count *= d;
    if (count != t.data.size()) throw DimensionError("tensor " + t.name + " dims do not match its data");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.bytes(t.name.data(), t.name.size());
    w.u8(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.u32(d);
    for (float v : t.data) w.f32(v);
  }
  const nlohmann::json config = {{"net", ckpt.net},
                                 {"train", ckpt.train},
                                 {"metric", ckpt.metric},
                                 {"weights", ckpt.weights},
                                 {"ablation", ckpt.ablation},
                                 {"mosaic_scale", ckpt.mosaic_scale},
                                 {"resolution", ckpt.resolution}};
  const std::string text = config.dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.bytes(text.data(), text.size());
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const unsigned char> bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(8), kMagic, 8) != 0) throw FormatError("not an EARCKPT1 checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint ckpt;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    const std::uint16_t len = r.u16();
    const unsigned char* name = r.take(len);
    t.name.assign(reinterpret_cast<const char*>(name), len);
    const std::uint8_t rank = r.u8();
    std::size_t elements = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      t.dims.push_back(r.u32());
      elements *= t.dims.back();
    }
    if (elements > bytes.size()) throw FormatError("checkpoint tensor table is corrupt at " + t.name);
    t.data.resize(elements);
    for (auto& v : t.data) v = r.f32();
    ckpt.tensors.push_back(std::move(t));
  }
  const std::uint32_t json_len = r.u32();
  const unsigned char* text = r.take(json_len);
  if (!r.done()) throw FormatError("trailing bytes after checkpoint configuration");
  try {
    const auto config = nlohmann::json::parse(text, text + json_len);
    ckpt.net = config.at("net").get<ReconNetConfig>();
    ckpt.train = config.at("train").get<TrainConfig>();
    ckpt.metric = config.at("metric").get<MetricConfig>();
    ckpt.weights = config.at("weights").get<LossWeights>();
    ckpt.ablation = config.at("ablation").get<AblationFlags>();
    ckpt.mosaic_scale = config.at("mosaic_scale").get<int>();
    ckpt.resolution = config.at("resolution").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint configuration is invalid: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace ear::nn
