#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <stdexcept>
#include <string>
#include <vector>

#include "sasg/tasks.hpp"

namespace sasg {

namespace {

constexpr std::uint32_t kImageMagic = 0x00000803;
constexpr std::uint32_t kLabelMagic = 0x00000801;

std::vector<unsigned char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open IDX file '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

[[noreturn]] void truncated(const std::string& path, std::size_t expected, std::size_t actual) {
  throw std::runtime_error("truncated IDX file '" + path + "': data ends at byte offset " + std::to_string(actual) +
                           ", expected " + std::to_string(expected) + " bytes");
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset, const std::string& path) {
  if (bytes.size() < offset + 4) truncated(path, offset + 4, bytes.size());
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void expect_magic(std::uint32_t got, std::uint32_t want, const std::string& path) {
  if (got != want) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "0x%08x (expected 0x%08x)", got, want);
    throw std::runtime_error("bad IDX magic number in '" + path + "': " + buf);
  }
}

}  // namespace

std::shared_ptr<Dataset> load_idx(const std::string& images_path, const std::string& labels_path) {
  const auto images = read_file(images_path);
  expect_magic(read_be32(images, 0, images_path), kImageMagic, images_path);
  const std::size_t count = read_be32(images, 4, images_path);
  const std::size_t rows = read_be32(images, 8, images_path);
  const std::size_t cols = read_be32(images, 12, images_path);
  const std::size_t pixels = rows * cols;
  const std::size_t image_bytes = 16 + count * pixels;
  if (images.size() < image_bytes) truncated(images_path, image_bytes, images.size());

  const auto labels = read_file(labels_path);
  expect_magic(read_be32(labels, 0, labels_path), kLabelMagic, labels_path);
  const std::size_t label_count = read_be32(labels, 4, labels_path);
  if (labels.size() < 8 + label_count) truncated(labels_path, 8 + label_count, labels.size());
  if (label_count != count) {
    throw std::runtime_error("IDX count mismatch: '" + images_path + "' has " + std::to_string(count) +
                             " images but '" + labels_path + "' has " + std::to_string(label_count) + " labels");
  }

  auto data = std::make_shared<Dataset>();
  data->features.resize(static_cast<Index>(count), static_cast<Index>(pixels));
  data->labels.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const unsigned char* px = images.data() + 16 + i * pixels;
    for (std::size_t j = 0; j < pixels; ++j) {
      data->features(static_cast<Index>(i), static_cast<Index>(j)) = static_cast<double>(px[j]) / 255.0;
    }
    const int label = labels[8 + i];
    if (label > 9) {
      throw std::runtime_error("IDX label out of range at byte offset " + std::to_string(8 + i) + " in '" +
                               labels_path + "'");
    }
    data->labels[i] = label;
  }
  return data;
}

}  // namespace sasg
