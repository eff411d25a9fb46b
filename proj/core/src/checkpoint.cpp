// Copyright 2026 The KVPO Authors
// SPDX-License-Identifier: Apache-2.0

#include "kvpo/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "kvpo/error.hpp"

namespace kvpo {

namespace {

constexpr char kMagic[8] = {'K', 'V', 'P', 'O', 'C', 'K', 'P', 'T'};

class Writer {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

  std::uint8_t u8() { return need(1), in_[pos_++]; }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(in_.begin() + static_cast<std::ptrdiff_t>(pos_),
                  in_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw ContractError("checkpoint truncated");
  }
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.params.values.size() != ckpt.params.layout.size()) {
    throw ContractError("checkpoint parameters do not match their layout");
  }
  if (ckpt.ema && ckpt.ema->size() != ckpt.params.size()) {
    throw ContractError("checkpoint EMA length differs from parameters");
  }
  Writer w;
  w.bytes(kMagic, sizeof(kMagic));
  w.u32(kCheckpointVersion);
  w.u64(ckpt.iteration);
  const auto& segs = ckpt.params.layout.segments();
  w.u32(static_cast<std::uint32_t>(segs.size()));
  for (const auto& s : segs) {
    w.u32(static_cast<std::uint32_t>(s.name.size()));
    w.bytes(s.name.data(), s.name.size());
    w.u64(s.offset);
    w.u64(s.length);
  }
  w.u64(ckpt.params.size());
  for (double v : ckpt.params.values) w.f64(v);
  w.u8(ckpt.ema ? 1 : 0);
  if (ckpt.ema) {
    for (double v : *ckpt.ema) w.f64(v);
  }
  w.u64(ckpt.config_json.size());
  w.bytes(ckpt.config_json.data(), ckpt.config_json.size());
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw ContractError("not a KVPO checkpoint (bad magic)");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw ContractError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint c;
  c.iteration = r.u64();
  const std::uint32_t nseg = r.u32();
  for (std::uint32_t i = 0; i < nseg; ++i) {
    const std::string name = r.str(r.u32());
    const std::uint64_t offset = r.u64();
    const std::uint64_t length = r.u64();
    if (c.params.layout.append(name, length) != offset) {
      throw ContractError("checkpoint segment '" + name + "' is not contiguous");
    }
  }
  const std::uint64_t count = r.u64();
  if (count != c.params.layout.size()) throw ContractError("checkpoint layout/size mismatch");
  c.params.values.resize(count);
  for (auto& v : c.params.values) v = r.f64();
  const std::uint8_t has_ema = r.u8();
  if (has_ema > 1) throw ContractError("checkpoint EMA flag corrupt");
  if (has_ema == 1) {
    std::vector<double> ema(count);
    for (auto& v : ema) v = r.f64();
    c.ema = std::move(ema);
  }
  c.config_json = r.str(r.u64());
  if (!r.done()) throw ContractError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace kvpo
