#include "refface/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace refface::io {
namespace {

torch::Tensor mat_to_tensor(const cv::Mat& mat) {
  // cv::Mat HWC uint8 -> owning tensor
  auto t = torch::from_blob(const_cast<uint8_t*>(mat.ptr<uint8_t>()),
                            {mat.rows, mat.cols, mat.channels()}, torch::kUInt8)
               .clone();
  return t;
}

cv::Mat tensor_to_mat(const torch::Tensor& hwc) {
  auto t = hwc.contiguous();
  const int channels = static_cast<int>(t.size(2));
  cv::Mat mat(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC(channels));
  std::memcpy(mat.data, t.data_ptr<uint8_t>(), t.numel());
  return mat;
}

}  // namespace

std::optional<torch::Tensor> read_rgb(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) return std::nullopt;
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  return mat_to_tensor(rgb).permute({2, 0, 1}).contiguous();
}

std::optional<torch::Tensor> read_gray(const std::filesystem::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) return std::nullopt;
  return mat_to_tensor(gray).squeeze(2).contiguous();
}

void write_rgb(const std::filesystem::path& path, const torch::Tensor& rgb8) {
  TORCH_CHECK(rgb8.dim() == 3 && rgb8.size(0) == 3 && rgb8.scalar_type() == torch::kUInt8,
              "write_rgb expects uint8 [3, H, W]");
  cv::Mat rgb = tensor_to_mat(rgb8.permute({1, 2, 0}));
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), bgr)) throw std::runtime_error("failed to write " + path.string());
}

void write_gray(const std::filesystem::path& path, const torch::Tensor& gray8) {
  TORCH_CHECK(gray8.dim() == 2 && gray8.scalar_type() == torch::kUInt8, "write_gray expects uint8 [H, W]");
  cv::Mat mat = tensor_to_mat(gray8.unsqueeze(2));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), mat)) throw std::runtime_error("failed to write " + path.string());
}

torch::Tensor resize_rgb(const torch::Tensor& rgb8, int64_t size) {
  if (rgb8.size(1) == size && rgb8.size(2) == size) return rgb8;
  cv::Mat src = tensor_to_mat(rgb8.permute({1, 2, 0}));
  cv::Mat dst;
  const int interp = src.rows > size ? cv::INTER_AREA : cv::INTER_LINEAR;
  cv::resize(src, dst, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, interp);
  return mat_to_tensor(dst).permute({2, 0, 1}).contiguous();
}

torch::Tensor resize_labels(const torch::Tensor& labels8, int64_t size) {
  if (labels8.size(0) == size && labels8.size(1) == size) return labels8;
  cv::Mat src = tensor_to_mat(labels8.unsqueeze(2));
  cv::Mat dst;
  cv::resize(src, dst, cv::Size(static_cast<int>(size), static_cast<int>(size)), 0, 0, cv::INTER_NEAREST);
  return mat_to_tensor(dst).squeeze(2).contiguous();
}

void write_mask(const std::filesystem::path& path, const Mask& mask) {
  write_gray(path, (mask.values > 0.5).to(torch::kUInt8).mul(255));
}

Mask read_mask(const std::filesystem::path& path, int64_t size) {
  auto gray = read_gray(path);
  if (!gray) throw AssetError("cannot decode mask file " + path.string());
  auto resized = resize_labels(*gray, size);
  return Mask{(resized > 127).to(torch::kFloat32)};
}

}  // namespace refface::io
