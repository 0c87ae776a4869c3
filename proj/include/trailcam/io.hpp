#pragma once

// Codec boundary: PNG/JPEG through OpenCV's imgcodecs, 8-bit values mapped
// to [0,1] by dividing by 255. Mean images persist as raw little-endian
// float32 planes with a JSON sidecar.

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "json.hpp"
#include "trailcam/error.hpp"
#include "trailcam/image.hpp"

namespace trailcam {

namespace fs = std::filesystem;

// Pixels only; the caller attaches manifest metadata.
inline TrailImage load_image(const fs::path& path) {
  cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (m.empty()) throw IoError("cannot decode image '" + path.string() + "'");
  double scale;
  switch (m.depth()) {
    case CV_8U: scale = 1.0 / 255.0; break;
    case CV_16U: scale = 1.0 / 65535.0; break;
    default: throw IoError("unsupported pixel depth in '" + path.string() + "'");
  }
  const int src_ch = m.channels();
  if (src_ch != 1 && src_ch != 3 && src_ch != 4) throw IoError("unsupported channel count in '" + path.string() + "'");
  cv::Mat f;
  m.convertTo(f, CV_MAKETYPE(CV_32F, src_ch), scale);

  TrailImage img;
  img.id = path.stem().string();
  img.width = f.cols;
  img.height = f.rows;
  img.channels = src_ch == 1 ? 1 : 3;
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height * img.channels);
  for (int y = 0; y < f.rows; ++y) {
    const float* row = f.ptr<float>(y);
    for (int x = 0; x < f.cols; ++x) {
      const float* px = row + static_cast<std::ptrdiff_t>(x) * src_ch;
      if (img.channels == 1) {
        img.at(x, y) = px[0];
      } else {
        // OpenCV stores BGR(A)
        img.at(x, y, 0) = px[2];
        img.at(x, y, 1) = px[1];
        img.at(x, y, 2) = px[0];
      }
    }
  }
  for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
  return img;
}

inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// 8-bit encode; format follows the file extension.
inline void save_image(const fs::path& path, const TrailImage& img) {
  cv::Mat m(img.height, img.width, img.channels == 1 ? CV_8UC1 : CV_8UC3);
  for (int y = 0; y < img.height; ++y) {
    auto* row = m.ptr<std::uint8_t>(y);
    for (int x = 0; x < img.width; ++x) {
      if (img.channels == 1) {
        row[x] = to_byte(img.at(x, y));
      } else {
        row[3 * x + 0] = to_byte(img.at(x, y, 2));
        row[3 * x + 1] = to_byte(img.at(x, y, 1));
        row[3 * x + 2] = to_byte(img.at(x, y, 0));
      }
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), m);
  } catch (const cv::Exception& e) {
    throw IoError("cannot encode image '" + path.string() + "': " + e.what());
  }
  if (!ok) throw IoError("cannot write image '" + path.string() + "'");
}

// ---------------------------------------------------------------------------
// Mean image persistence: <stem>.f32 + <stem>.json

struct MeanImageFile {
  MeanImage mean;
  std::string site_id;
  std::string date;
};

inline void save_mean_image(const fs::path& stem, const MeanImage& mean, const std::string& site_id,
                            const std::string& date) {
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  const std::vector<double> values = mean.mean();
  std::string bytes;
  bytes.reserve(values.size() * 4);
  for (double v : values) {
    auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int k = 0; k < 4; ++k) bytes.push_back(static_cast<char>((bits >> (8 * k)) & 0xFFu));
  }
  fs::path raw = stem;
  raw += ".f32";
  fs::path side = stem;
  side += ".json";
  {
    std::ofstream out(raw, std::ios::binary);
    if (!out) throw IoError("cannot write '" + raw.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to '" + raw.string() + "'");
  }
  nlohmann::ordered_json j;
  j["width"] = mean.width();
  j["height"] = mean.height();
  j["count"] = mean.count();
  j["site_id"] = site_id;
  j["date"] = date;
  std::ofstream out(side);
  if (!out) throw IoError("cannot write '" + side.string() + "'");
  out << j.dump(2) << '\n';
}

inline MeanImageFile load_mean_image(const fs::path& stem) {
  fs::path raw = stem;
  raw += ".f32";
  fs::path side = stem;
  side += ".json";
  std::ifstream js(side);
  if (!js) throw IoError("cannot open '" + side.string() + "'");
  nlohmann::json j;
  try {
    js >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed sidecar '" + side.string() + "': " + e.what());
  }
  MeanImageFile out;
  int width = 0, height = 0;
  std::size_t count = 0;
  try {
    width = j.at("width").get<int>();
    height = j.at("height").get<int>();
    count = j.at("count").get<std::size_t>();
    out.site_id = j.at("site_id").get<std::string>();
    out.date = j.at("date").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed sidecar '" + side.string() + "': " + e.what());
  }
  if (width < 1 || height < 1) throw IoError("sidecar '" + side.string() + "' has invalid geometry");
  std::ifstream in(raw, std::ios::binary);
  if (!in) throw IoError("cannot open '" + raw.string() + "'");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (bytes.size() != n * 4) throw IoError("'" + raw.string() + "' size does not match its sidecar");
  std::vector<double> values(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + k])) << (8 * k);
    values[i] = std::bit_cast<float>(bits);
  }
  out.mean = MeanImage::from_mean(width, height, values, count);
  return out;
}

}  // namespace trailcam
