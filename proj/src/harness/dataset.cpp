#include "ear/dataset.hpp"

#include <algorithm>
#include <cctype>

#include "ear/error.hpp"

namespace ear {

namespace fs = std::filesystem;

std::string to_string(Label label) { return label == Label::normal ? "normal" : "anomalous"; }

std::size_t DatasetSpec::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(test.begin(), test.end(), [label](const Sample& s) { return s.label == label; }));
}

namespace {

bool is_png(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png";
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_png(entry.path())) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> list_subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

DatasetSpec scan_dataset(const fs::path& root, const std::string& category, CategoryKind kind,
                         std::optional<fs::path> attention_dir) {
  DatasetSpec spec;
  spec.root = root;
  spec.category = category;
  spec.kind = kind;
  spec.attention_dir = std::move(attention_dir);

  const fs::path base = spec.category_dir();
  if (!fs::is_directory(base)) throw IoError("dataset directory not found: " + base.string());
  const fs::path train_dir = base / "train" / "good";
  if (!fs::is_directory(train_dir)) throw IoError("missing train/good under " + base.string());
  const fs::path test_dir = base / "test";
  if (!fs::is_directory(test_dir / "good")) throw IoError("missing test/good under " + base.string());

  for (const auto& p : list_pngs(train_dir))
    spec.train.push_back({p, fs::relative(p, base).generic_string(), Label::normal});
  for (const auto& sub : list_subdirs(test_dir)) {
    const Label label = sub.filename() == "good" ? Label::normal : Label::anomalous;
    for (const auto& p : list_pngs(sub)) spec.test.push_back({p, fs::relative(p, base).generic_string(), label});
  }
  std::sort(spec.test.begin(), spec.test.end(),
            [](const Sample& a, const Sample& b) { return a.relative < b.relative; });

  if (spec.train.empty()) throw ValueError("train/good contains no images");
  if (spec.count(Label::normal) == 0) throw ValueError("test/good contains no images");
  if (spec.count(Label::anomalous) == 0) throw ValueError("test split has no anomalous images");
  return spec;
}

std::optional<fs::path> attention_path(const DatasetSpec& spec, const Sample& sample) {
  if (!spec.attention_dir) return std::nullopt;
  fs::path rel(sample.relative);
  rel.replace_extension(".earattn");
  return *spec.attention_dir / rel;
}

PreparedImage prepare_image(const fs::path& image_path, const std::optional<fs::path>& attention_file,
                            int resolution) {
  PreparedImage out;
  out.image = load_image(image_path);
  if (resolution > 0 && (out.image.height() != resolution || out.image.width() != resolution))
    out.image = resize_bilinear(out.image, resolution, resolution);
  AttentionMap attn;
  if (attention_file && fs::is_regular_file(*attention_file)) {
    attn = read_attention(*attention_file);
  } else {
    attn = fallback_saliency(out.image);
    out.used_fallback = true;
  }
  out.mask = binarize_q3(attn, out.image.height(), out.image.width());
  return out;
}

}  // namespace ear
