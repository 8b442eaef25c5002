#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ear/image.hpp"
#include "ear/saliency.hpp"
#include "ear/scalest.hpp"

namespace ear {

enum class Label { normal, anomalous };

std::string to_string(Label label);

struct Sample {
  std::filesystem::path path;
  /// Path relative to the category directory, e.g. "test/crack/003.png".
  std::string relative;
  Label label = Label::normal;
};

/// MVTec-style layout: <root>/<category>/train/good, <root>/<category>/test/<defect or good>.
struct DatasetSpec {
  std::filesystem::path root;
  std::string category;
  CategoryKind kind = CategoryKind::objects;
  std::vector<Sample> train;
  std::vector<Sample> test;
  /// Mirrors the category directory; "<dir>/test/crack/003.earattn" belongs to "test/crack/003.png".
  std::optional<std::filesystem::path> attention_dir;

  std::filesystem::path category_dir() const { return root / category; }
  std::size_t count(Label label) const;
};

/// Paths are sorted lexicographically. Only .png files are picked up.
DatasetSpec scan_dataset(const std::filesystem::path& root, const std::string& category,
                         CategoryKind kind = CategoryKind::objects,
                         std::optional<std::filesystem::path> attention_dir = std::nullopt);

/// Attention file for a sample, or nullopt when the spec has no attention directory.
std::optional<std::filesystem::path> attention_path(const DatasetSpec& spec, const Sample& sample);

struct PreparedImage {
  Image image;
  SaliencyMask mask;
  bool used_fallback = false;
};

/// Loads and resizes the image (bilinear; resolution 0 keeps the native size) and derives its mask
/// from the attention file, or from fallback_saliency when the file is absent.
PreparedImage prepare_image(const std::filesystem::path& image_path,
                            const std::optional<std::filesystem::path>& attention_file, int resolution);

}  // namespace ear
