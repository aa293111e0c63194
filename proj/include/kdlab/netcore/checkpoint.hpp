#pragma once

#include <cstdint>
#include <string>

#include "kdlab/binio.hpp"
#include "kdlab/netcore/convnet.hpp"

namespace kdl::net {

// Layout: "KDLB" | u32 version | u32 header length | header text (ConvNetSpec::to_text)
//         | every parameter tensor as little-endian f32, row-major, declaration order.
inline constexpr std::uint32_t checkpoint_version = 1;

template <typename T>
struct Checkpoint {
  ConvNetSpec spec;
  ModelParams<T> params;
};

template <typename T>
std::string encode_checkpoint(const ConvNetSpec& spec, const ModelParams<T>& params) {
  check_params(spec, params);
  std::string out = "KDLB";
  binio::put_le<std::uint32_t>(out, checkpoint_version);
  std::string header = spec.to_text();
  binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out += header;
  for (const auto* t : params.tensors())
    for (T v : t->values) binio::put_f32(out, static_cast<float>(v));
  return out;
}

template <typename T>
Checkpoint<T> decode_checkpoint(const std::string& bytes) {
  binio::Reader r(bytes, "checkpoint");
  if (r.get_bytes(4, "magic") != "KDLB") fail(ErrorKind::bad_magic, "checkpoint: missing KDLB magic");
  auto version = r.get_le<std::uint32_t>("version");
  if (version != checkpoint_version)
    fail(ErrorKind::schema, "checkpoint: unsupported version ", version, " (expected ", checkpoint_version, ")");
  auto header_len = r.get_le<std::uint32_t>("header length");
  Checkpoint<T> ck;
  ck.spec = ConvNetSpec::from_text(r.get_bytes(header_len, "network header"));
  ck.params = ModelParams<T>::zeros(ck.spec);
  for (auto* t : ck.params.tensors())
    for (T& v : t->values) v = static_cast<T>(r.get_f32("parameter data"));
  if (r.remaining() != 0) fail(ErrorKind::schema, "checkpoint: ", r.remaining(), " trailing bytes");
  return ck;
}

template <typename T>
void save_checkpoint(const std::string& path, const ConvNetSpec& spec, const ModelParams<T>& params) {
  binio::write_file(path, encode_checkpoint(spec, params));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  return decode_checkpoint<T>(binio::read_file(path));
}

}  // namespace kdl::net
