#include "hdm/datapipe.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "hdm/error.hpp"
#include "hdm/image_io.hpp"
#include "hdm/rng.hpp"

namespace hdm::datapipe {

Image resize_bilinear(const Image& image, int height, int width) {
  require(!image.empty() && image.height > 0 && image.width > 0, ErrorKind::kInvalidImage, "cannot resize an empty image");
  require(height > 0 && width > 0, ErrorKind::kInvalidDimension, "resize target must be positive");
  if (height == image.height && width == image.width) return image;
  Image out(image.channels, height, width);
  const double sy = static_cast<double>(image.height) / height;
  const double sx = static_cast<double>(image.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = image.at(c, y0, x0) * (1 - wx) + image.at(c, y0, x1) * wx;
        const double bot = image.at(c, y1, x0) * (1 - wx) + image.at(c, y1, x1) * wx;
        out.at(c, y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

Image resize_min_dim(const Image& image, int target) {
  require(target >= 1, ErrorKind::kInvalidDimension, "resize target must be at least 1");
  require(!image.empty() && image.height > 0 && image.width > 0, ErrorKind::kInvalidImage, "zero-pixel image");
  const int short_side = std::min(image.height, image.width);
  if (short_side == target) return image;
  const double scale = static_cast<double>(target) / short_side;
  const int h = image.height == short_side ? target : static_cast<int>(std::floor(image.height * scale));
  const int w = image.width == short_side ? target : static_cast<int>(std::floor(image.width * scale));
  return resize_bilinear(image, h, w);
}

Crop shifted_square_crop(const Image& image, const geometry::PositionMap& pos_map, int patch, std::mt19937_64& gen) {
  require(patch >= 1, ErrorKind::kShape, "patch must be positive");
  require(pos_map.height() == image.height / patch && pos_map.width() == image.width / patch, ErrorKind::kShape,
          "position map does not match the image token grid");
  const int side = std::min(image.height, image.width);
  require(side % patch == 0, ErrorKind::kShape, "crop side must be a multiple of the patch size");
  const int side_tok = side / patch;
  const int range_h = pos_map.height() - side_tok;
  const int range_w = pos_map.width() - side_tok;
  const int k = static_cast<int>(rng::below(gen, static_cast<std::uint64_t>(std::max(range_h, range_w)) + 1));
  Crop out;
  const int ty = range_h > 0 ? k : 0;
  const int tx = range_w > 0 ? k : 0;
  out.y0 = ty * patch;
  out.x0 = tx * patch;
  out.image = Image(image.channels, side, side);
  for (int c = 0; c < image.channels; ++c) {
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) out.image.at(c, y, x) = image.at(c, out.y0 + y, out.x0 + x);
    }
  }
  out.pos = pos_map.slice(ty, tx, side_tok, side_tok);
  return out;
}

geometry::PositionMap inference_position_map(int height, int width, int patch, const geometry::CameraTransform& cam) {
  require(patch >= 1 && height >= patch && width >= patch, ErrorKind::kShape, "target smaller than one patch");
  require(height % patch == 0 && width % patch == 0, ErrorKind::kShape, "target dims must be multiples of the patch size");
  return geometry::apply_camera({height / patch, width / patch}, cam);
}

CropSample make_crop_sample(const RawSample& raw, int train_size, int patch, std::mt19937_64& gen,
                            const textcond::Tokenizer& tokenizer) {
  require(train_size % patch == 0, ErrorKind::kInvalidConfig, "train size must be a multiple of the patch size");
  auto resized = resize_min_dim(raw.image, train_size);
  const auto full = geometry::make_position_map(resized.height / patch, resized.width / patch);
  auto crop = shifted_square_crop(resized, full, patch, gen);
  CropSample s;
  s.image = std::move(crop.image);
  s.pos = std::move(crop.pos);
  s.caption = raw.caption;
  s.caption_tokens = tokenizer.encode(raw.caption);
  s.y0 = crop.y0;
  s.x0 = crop.x0;
  s.source_height = resized.height;
  s.source_width = resized.width;
  return s;
}

const std::vector<std::string>& ProceduralDataset::shapes() {
  static const std::vector<std::string> v{"circle", "square", "triangle"};
  return v;
}

const std::vector<std::string>& ProceduralDataset::colors() {
  static const std::vector<std::string> v{"red", "green", "blue", "yellow", "cyan", "magenta", "white"};
  return v;
}

const std::vector<std::string>& ProceduralDataset::placements() {
  static const std::vector<std::string> v{"center", "top", "bottom", "left", "right"};
  return v;
}

ProceduralDataset::ProceduralDataset(std::uint64_t seed, int size, double rect_fraction)
    : seed_(seed), size_(size), rect_fraction_(rect_fraction) {
  require(size >= 4, ErrorKind::kInvalidDimension, "procedural images need at least 4 pixels per side");
  require(rect_fraction >= 0.0 && rect_fraction <= 1.0, ErrorKind::kInvalidConfig, "rect_fraction must lie in [0, 1]");
}

RawSample ProceduralDataset::render(int shape, int color, int placement, int height, int width) {
  static const float kRgb[7][3] = {{1, -1, -1}, {-1, 1, -1}, {-1, -1, 1}, {1, 1, -1},
                                   {-1, 1, 1},  {1, -1, 1},  {1, 1, 1}};
  static const double kCenter[5][2] = {{0.5, 0.5}, {0.25, 0.5}, {0.75, 0.5}, {0.5, 0.25}, {0.5, 0.75}};
  require(shape >= 0 && shape < 3 && color >= 0 && color < 7 && placement >= 0 && placement < 5,
          ErrorKind::kInvalidConfig, "scene index out of range");
  RawSample out;
  out.image = Image(3, height, width, -1.0f);
  const double cy = kCenter[placement][0] * height;
  const double cx = kCenter[placement][1] * width;
  const double r = 0.2 * std::min(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const double py = y + 0.5 - cy;
      const double px = x + 0.5 - cx;
      bool inside = false;
      switch (shape) {
        case 0: inside = px * px + py * py <= r * r; break;
        case 1: inside = std::abs(px) <= r && std::abs(py) <= r; break;
        default: inside = py >= -r && py <= r && std::abs(px) <= (py + r) / 2; break;
      }
      if (!inside) continue;
      for (int c = 0; c < 3; ++c) out.image.at(c, y, x) = kRgb[color][c];
    }
  }
  out.caption = colors()[static_cast<std::size_t>(color)] + " " + shapes()[static_cast<std::size_t>(shape)] + " " +
                placements()[static_cast<std::size_t>(placement)];
  return out;
}

RawSample ProceduralDataset::sample(std::uint64_t index) const {
  auto gen = rng::stream(seed_, {index});
  const int shape = static_cast<int>(rng::below(gen, 3));
  const int color = static_cast<int>(rng::below(gen, 7));
  const int placement = static_cast<int>(rng::below(gen, 5));
  int h = size_;
  int w = size_;
  if (rect_fraction_ > 0.0 && rng::unit(gen) < rect_fraction_) {
    if (gen() & 1U) {
      h *= 2;
    } else {
      w *= 2;
    }
  }
  return render(shape, color, placement, h, w);
}

namespace {

bool is_png(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png";
}

std::string read_caption(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) return {};
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  while (!text.empty() && std::isspace(static_cast<unsigned char>(text.back()))) text.pop_back();
  return text;
}

}  // namespace

Corpus Corpus::load(const std::filesystem::path& source) {
  std::error_code ec;
  std::vector<CorpusEntry> listed;
  if (std::filesystem::is_directory(source, ec)) {
    std::filesystem::directory_iterator it(source, ec);
    require(!ec, ErrorKind::kIo, "cannot read directory " + source.string() + ": " + ec.message());
    for (const auto& entry : it) {
      if (!entry.is_regular_file() || !is_png(entry.path())) continue;
      auto caption = entry.path();
      caption.replace_extension(".txt");
      listed.push_back({entry.path(), read_caption(caption)});
    }
    std::sort(listed.begin(), listed.end(), [](const auto& a, const auto& b) { return a.image < b.image; });
  } else {
    std::ifstream f(source);
    require(static_cast<bool>(f), ErrorKind::kIo, "cannot open corpus source " + source.string());
    nlohmann::json manifest;
    try {
      f >> manifest;
      for (const auto& item : manifest) {
        std::filesystem::path img = item.at("image").get<std::string>();
        if (img.is_relative()) img = source.parent_path() / img;
        listed.push_back({img, item.value("caption", std::string{})});
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::kCorpus, "malformed manifest " + source.string() + ": " + e.what());
    }
  }
  require(!listed.empty(), ErrorKind::kCorpus, "no images found in " + source.string());

  Corpus out;
  out.report_.listed = listed.size();
  for (auto& e : listed) {
    try {
      image_io::read_png(e.image);
      out.entries_.push_back(std::move(e));
    } catch (const Error&) {
      ++out.report_.skipped;
    }
  }
  if (out.report_.skipped > 0) {
    std::cerr << "warning: skipped " << out.report_.skipped << " of " << out.report_.listed
              << " corpus images that failed to decode\n";
  }
  require(out.report_.skipped * 2 <= out.report_.listed, ErrorKind::kCorpus,
          "more than half of the corpus failed to decode");
  return out;
}

RawSample Corpus::sample(std::uint64_t index) const {
  const auto& e = entries_[static_cast<std::size_t>(index % entries_.size())];
  return {image_io::read_png(e.image), e.caption};
}

Pipeline::Pipeline(const DatasetSpec& spec, int patch, const textcond::Tokenizer& tokenizer)
    : spec_(spec), patch_(patch), tokenizer_(tokenizer) {
  require(spec.train_size >= patch && spec.train_size % patch == 0, ErrorKind::kInvalidConfig,
          "train size must be a positive multiple of the patch size");
  const std::string prefix = "procedural:";
  if (spec.source.starts_with(prefix)) {
    std::uint64_t seed = 0;
    try {
      seed = std::stoull(spec.source.substr(prefix.size()));
    } catch (const std::exception&) {
      fail(ErrorKind::kInvalidConfig, "bad procedural source " + spec.source);
    }
    procedural_ = std::make_unique<ProceduralDataset>(seed, spec.train_size, spec.rect_fraction);
  } else {
    corpus_ = std::make_unique<Corpus>(Corpus::load(spec.source));
  }
}

CropSample Pipeline::sample(std::uint64_t index) const {
  auto gen = rng::stream(spec_.seed, {index, 0x63726f70});
  RawSample raw;
  if (procedural_) {
    raw = procedural_->sample(index);
  } else {
    const std::uint64_t n = corpus_->entries().size();
    raw = corpus_->sample(spec_.shuffle ? rng::derive(spec_.seed, {index, 0x73687566}) % n : index % n);
  }
  return make_crop_sample(raw, spec_.train_size, patch_, gen, tokenizer_);
}

}  // namespace hdm::datapipe
