#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kdlab/binio.hpp"
#include "kdlab/datagen/dataset.hpp"

namespace kdl::data {

// "KDDS" | u32 version | u32 N, H, W, C | u16 labels[N] | u8 pixels[N*H*W*3] (row-major RGB).
inline constexpr std::uint32_t raw_version = 1;

inline std::string encode_raw_dataset(const Dataset& d) {
  if (d.channels != 3) fail(ErrorKind::shape, "raw dataset format stores RGB images only");
  if (d.classes > 65536) fail(ErrorKind::out_of_range, "raw dataset format holds at most 65536 classes");
  d.validate();
  std::string out = "KDDS";
  binio::put_le<std::uint32_t>(out, raw_version);
  for (std::size_t v : {d.size(), d.height, d.width, d.classes}) binio::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  for (auto l : d.labels) binio::put_le<std::uint16_t>(out, static_cast<std::uint16_t>(l));
  out.reserve(out.size() + d.pixels.size());
  for (float v : d.pixels) out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0f))));
  return out;
}

inline Dataset decode_raw_dataset(const std::string& bytes, Split split = Split::train) {
  binio::Reader r(bytes, "raw dataset");
  if (r.get_bytes(4, "magic") != "KDDS") fail(ErrorKind::bad_magic, "raw dataset: missing KDDS magic");
  auto version = r.get_le<std::uint32_t>("version");
  if (version != raw_version) fail(ErrorKind::schema, "raw dataset: unsupported version ", version);
  Dataset d;
  const std::size_t n = r.get_le<std::uint32_t>("N");
  d.height = r.get_le<std::uint32_t>("H");
  d.width = r.get_le<std::uint32_t>("W");
  d.classes = r.get_le<std::uint32_t>("C");
  d.channels = 3;
  d.split = split;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = r.get_le<std::uint16_t>("labels");
    if (d.labels[i] >= d.classes)
      fail(ErrorKind::out_of_range, "raw dataset: label ", d.labels[i], " at index ", i, " not below class count ", d.classes);
  }
  const std::string px = r.get_bytes(n * d.image_size(), "pixels");
  d.pixels.resize(px.size());
  for (std::size_t i = 0; i < px.size(); ++i) d.pixels[i] = static_cast<float>(static_cast<std::uint8_t>(px[i])) / 255.0f;
  if (r.remaining() != 0) fail(ErrorKind::schema, "raw dataset: ", r.remaining(), " trailing bytes");
  return d;
}

inline Dataset load_raw_dataset(const std::string& path, Split split = Split::train) {
  return decode_raw_dataset(binio::read_file(path), split);
}

inline void save_raw_dataset(const std::string& path, const Dataset& d) { binio::write_file(path, encode_raw_dataset(d)); }

/// CIFAR-10/100 binary batches: per record, 1 (CIFAR-10) or 2 (CIFAR-100: coarse, fine) label
/// bytes followed by 1024 R, 1024 G, 1024 B bytes of a 32x32 image. CIFAR-100 uses fine labels.
inline Dataset decode_cifar_binary(const std::vector<std::string>& files, bool cifar100, Split split = Split::train) {
  Dataset d;
  d.height = 32;
  d.width = 32;
  d.channels = 3;
  d.classes = cifar100 ? 100 : 10;
  d.split = split;
  const std::size_t label_bytes = cifar100 ? 2 : 1;
  const std::size_t record = label_bytes + 3072;
  for (const auto& bytes : files) {
    if (bytes.size() % record != 0)
      fail(ErrorKind::truncated, "CIFAR batch size ", bytes.size(), " is not a multiple of ", record);
    for (std::size_t off = 0; off < bytes.size(); off += record) {
      auto label = static_cast<std::uint8_t>(bytes[off + label_bytes - 1]);
      if (label >= d.classes) fail(ErrorKind::out_of_range, "CIFAR label ", int(label), " out of range");
      Image img(32, 32, 3);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < 1024; ++p)
          img.pixels[p * 3 + c] =
              static_cast<float>(static_cast<std::uint8_t>(bytes[off + label_bytes + c * 1024 + p])) / 255.0f;
      d.push_back(img, label);
    }
  }
  return d;
}

}  // namespace kdl::data
