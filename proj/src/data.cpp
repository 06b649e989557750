#include "ppsvae/data.hpp"

#include <jpeglib.h>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include "ppsvae/noise.hpp"

namespace ppsvae {

namespace fs = std::filesystem;

Tensor Dataset::image(int i) const {
  require(i >= 0 && i < size(), "dataset index out of range");
  return images.slice_batch(i).reshaped({channels(), height(), width()});
}

Tensor Dataset::gather(const std::vector<int>& indices) const {
  require(!indices.empty(), "gather of no images");
  const std::size_t per = static_cast<std::size_t>(channels()) * height() * width();
  Tensor out({static_cast<int>(indices.size()), channels(), height(), width()});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    require(indices[k] >= 0 && indices[k] < size(), "dataset index out of range");
    std::copy_n(images.data() + static_cast<std::size_t>(indices[k]) * per, per, out.data() + k * per);
  }
  return out;
}

Dataset Dataset::subset(const std::vector<int>& indices) const {
  Dataset out;
  out.name = name;
  out.split = split;
  out.num_classes = num_classes;
  out.images = gather(indices);
  const std::size_t plane = static_cast<std::size_t>(height()) * width();
  if (!shape_masks.empty()) out.shape_masks = Tensor({static_cast<int>(indices.size()), height(), width()});
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto i = static_cast<std::size_t>(indices[k]);
    if (labeled()) out.labels.push_back(labels[i]);
    if (!attributes.empty()) out.attributes.push_back(attributes[i]);
    if (!shape_masks.empty())
      std::copy_n(shape_masks.data() + i * plane, plane, out.shape_masks.data() + k * plane);
  }
  return out;
}

void Dataset::check_invariants() const {
  require(images.rank() == 4 && size() >= 1, "dataset images must be a nonempty N x C x H x W array");
  for (double v : images.vec()) require(v >= 0.0 && v <= 1.0, "dataset pixel outside [0, 1]");
  if (labeled()) {
    require(static_cast<int>(labels.size()) == size(), "label count differs from image count");
    for (int l : labels) require(l >= 0 && l < num_classes, "label outside [0, num_classes)");
  }
}

// ---------------------------------------------------------------------------
// Synthetic shapes

namespace {

struct ShapeSpec {
  int kind;
  double cx, cy, size, aspect;
};

bool inside(const ShapeSpec& s, double x, double y) {
  const double dx = x - s.cx, dy = y - s.cy, half = s.size / 2.0;
  switch (s.kind) {
    case 0: return std::abs(dx) <= half && std::abs(dy) <= half * s.aspect;
    case 1: return dx * dx + dy * dy <= half * half;
    case 2: {
      const double arm = s.size / 6.0;
      return (std::abs(dx) <= half && std::abs(dy) <= arm) || (std::abs(dy) <= half && std::abs(dx) <= arm);
    }
    case 3: return dy >= -half && dy <= half && std::abs(dx) <= (dy + half) / 2.0;
    default: {
      const double r2 = dx * dx + dy * dy, inner = 0.55 * half;
      return r2 <= half * half && r2 >= inner * inner;
    }
  }
}

}  // namespace

Dataset synth_shapes(int n, int height, int width, int num_classes, std::uint64_t seed) {
  if (height < 8 || width < 8) throw UsageError("synth_shapes needs H, W >= 8");
  if (num_classes < 2 || num_classes > 5) throw UsageError("synth_shapes needs 2 <= num_classes <= 5");
  if (n < 1) throw UsageError("synth_shapes needs n >= 1");

  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  constexpr int kSuper = 4;
  const double side = std::min(height, width);

  Dataset ds;
  ds.name = "synth_shapes";
  ds.split = "train";
  ds.num_classes = num_classes;
  ds.images = Tensor({n, 1, height, width});
  ds.shape_masks = Tensor({n, height, width});
  ds.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ShapeSpec s;
    s.kind = i % num_classes;
    s.size = side * (0.45 + 0.4 * unit(rng));
    s.aspect = 0.6 + 0.4 * unit(rng);
    s.cx = s.size / 2.0 + unit(rng) * (width - s.size);
    s.cy = s.size / 2.0 + unit(rng) * (height - s.size);
    const double intensity = 0.5 + 0.5 * unit(rng);
    ds.labels[static_cast<std::size_t>(i)] = s.kind;
    for (int h = 0; h < height; ++h)
      for (int w = 0; w < width; ++w) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy)
          for (int sx = 0; sx < kSuper; ++sx)
            hits += inside(s, w + (sx + 0.5) / kSuper, h + (sy + 0.5) / kSuper);
        const double coverage = static_cast<double>(hits) / (kSuper * kSuper);
        ds.images.at(i, 0, h, w) = intensity * coverage;
        ds.shape_masks[(static_cast<std::size_t>(i) * height + h) * width + w] = coverage >= 0.5 ? 1.0 : 0.0;
      }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// File formats

namespace {

// Reads a whole file; zlib passes uncompressed files through unchanged.
std::vector<unsigned char> read_maybe_gz(const fs::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IngestionError("cannot open " + path.string());
  std::vector<unsigned char> out;
  std::array<unsigned char, 1 << 16> buf{};
  int got = 0;
  while ((got = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) out.insert(out.end(), buf.data(), buf.data() + got);
  const bool failed = got < 0;
  gzclose(f);
  if (failed) throw IngestionError("corrupt compressed data in " + path.string());
  return out;
}

fs::path first_existing(const std::vector<fs::path>& candidates) {
  for (const auto& p : candidates)
    if (fs::exists(p)) return p;
  return candidates.front();
}

std::uint32_t be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

Dataset load_fashion_mnist(const fs::path& root, const std::string& split, int max_items) {
  const std::string prefix = split == "train" ? "train" : "t10k";
  const fs::path img_path = first_existing(
      {root / (prefix + "-images-idx3-ubyte"), root / (prefix + "-images-idx3-ubyte.gz")});
  const fs::path lbl_path = first_existing(
      {root / (prefix + "-labels-idx1-ubyte"), root / (prefix + "-labels-idx1-ubyte.gz")});
  const auto img = read_maybe_gz(img_path);
  const auto lbl = read_maybe_gz(lbl_path);
  if (img.size() < 16 || be32(img, 0) != 2051) throw IngestionError("bad idx image header in " + img_path.string());
  if (lbl.size() < 8 || be32(lbl, 0) != 2049) throw IngestionError("bad idx label header in " + lbl_path.string());
  int n = static_cast<int>(be32(img, 4));
  const int rows = static_cast<int>(be32(img, 8)), cols = static_cast<int>(be32(img, 12));
  if (img.size() != 16 + static_cast<std::size_t>(n) * rows * cols)
    throw IngestionError("truncated image data in " + img_path.string());
  if (static_cast<int>(be32(lbl, 4)) != n || lbl.size() != 8 + static_cast<std::size_t>(n))
    throw IngestionError("label count mismatch in " + lbl_path.string());
  if (max_items > 0) n = std::min(n, max_items);

  Dataset ds;
  ds.name = "fashion_mnist";
  ds.split = split;
  ds.num_classes = 10;
  ds.images = Tensor({n, 1, rows, cols});
  for (std::size_t i = 0; i < ds.images.numel(); ++i) ds.images[i] = img[16 + i] / 255.0;
  for (int i = 0; i < n; ++i) {
    const int l = lbl[8 + static_cast<std::size_t>(i)];
    if (l > 9) throw IngestionError("label out of range in " + lbl_path.string());
    ds.labels.push_back(l);
  }
  return ds;
}

Dataset load_cifar10(const fs::path& root, const std::string& split, int max_items) {
  const fs::path dir = fs::exists(root / "cifar-10-batches-bin") ? root / "cifar-10-batches-bin" : root;
  std::vector<fs::path> files;
  if (split == "train") {
    for (int b = 1; b <= 5; ++b) files.push_back(dir / ("data_batch_" + std::to_string(b) + ".bin"));
  } else {
    files.push_back(dir / "test_batch.bin");
  }
  constexpr std::size_t kRecord = 1 + 3 * 32 * 32;
  std::vector<unsigned char> all;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    if (!in) throw IngestionError("cannot open " + f.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.empty() || bytes.size() % kRecord != 0) throw IngestionError("truncated record in " + f.string());
    all.insert(all.end(), bytes.begin(), bytes.end());
  }
  int n = static_cast<int>(all.size() / kRecord);
  if (max_items > 0) n = std::min(n, max_items);
  Dataset ds;
  ds.name = "cifar10";
  ds.split = split;
  ds.num_classes = 10;
  ds.images = Tensor({n, 3, 32, 32});
  for (int i = 0; i < n; ++i) {
    const unsigned char* rec = all.data() + static_cast<std::size_t>(i) * kRecord;
    if (rec[0] > 9) throw IngestionError("label out of range in CIFAR-10 record " + std::to_string(i));
    ds.labels.push_back(rec[0]);
    for (std::size_t j = 0; j < kRecord - 1; ++j)
      ds.images[static_cast<std::size_t>(i) * (kRecord - 1) + j] = rec[1 + j] / 255.0;
  }
  return ds;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_fail(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

// Decodes an RGB JPEG, center-crops to a square and box-resizes to out x out.
void decode_celeba_jpeg(const fs::path& path, int out, double* dst) {
  std::FILE* f = std::fopen(path.string().c_str(), "rb");
  if (!f) throw IngestionError("cannot open " + path.string());
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_fail;
  std::vector<unsigned char> pixels;
  int width = 0, height = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    throw IngestionError("corrupt JPEG " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  width = static_cast<int>(cinfo.output_width);
  height = static_cast<int>(cinfo.output_height);
  pixels.resize(static_cast<std::size_t>(width) * height * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(f);

  const int crop = std::min(width, height), x0 = (width - crop) / 2, y0 = (height - crop) / 2;
  for (int c = 0; c < 3; ++c)
    for (int oy = 0; oy < out; ++oy)
      for (int ox = 0; ox < out; ++ox) {
        const int ya = oy * crop / out, yb = std::max(ya + 1, (oy + 1) * crop / out);
        const int xa = ox * crop / out, xb = std::max(xa + 1, (ox + 1) * crop / out);
        double acc = 0.0;
        for (int y = ya; y < yb; ++y)
          for (int x = xa; x < xb; ++x)
            acc += pixels[(static_cast<std::size_t>(y0 + y) * width + x0 + x) * 3 + c];
        dst[(static_cast<std::size_t>(c) * out + oy) * out + ox] = acc / ((yb - ya) * (xb - xa) * 255.0);
      }
}

Dataset load_celeba(const fs::path& root, const std::string& split, int max_items) {
  const fs::path attr_path = root / "list_attr_celeba.txt";
  const fs::path part_path = root / "list_eval_partition.txt";
  const fs::path img_dir = root / "img_align_celeba";
  std::ifstream attr(attr_path), part(part_path);
  if (!attr) throw IngestionError("cannot open " + attr_path.string());
  if (!part) throw IngestionError("cannot open " + part_path.string());

  std::map<std::string, int> partition;
  for (std::string file; part >> file;) {
    int p = 0;
    if (!(part >> p)) throw IngestionError("malformed line in " + part_path.string());
    partition[file] = p;
  }
  std::string line;
  std::getline(attr, line);
  std::getline(attr, line);
  std::istringstream header(line);
  std::vector<std::string> names;
  for (std::string s; header >> s;) names.push_back(s);
  const std::array<std::string, 3> wanted{"Chubby", "Male", "Oval_Face"};
  std::array<int, 3> columns{};
  for (std::size_t k = 0; k < wanted.size(); ++k) {
    const auto it = std::find(names.begin(), names.end(), wanted[k]);
    if (it == names.end()) throw IngestionError("attribute " + wanted[k] + " missing from " + attr_path.string());
    columns[k] = static_cast<int>(it - names.begin());
  }

  const int want_partition = split == "train" ? 0 : 2;
  std::vector<std::string> files;
  std::vector<std::vector<int>> attrs;
  while (std::getline(attr, line)) {
    std::istringstream row(line);
    std::string file;
    if (!(row >> file)) continue;
    std::vector<int> values;
    for (int v; row >> v;) values.push_back(v);
    if (values.size() != names.size()) throw IngestionError("malformed row for " + file + " in " + attr_path.string());
    const auto p = partition.find(file);
    if (p == partition.end() || p->second != want_partition) continue;
    std::vector<int> picked;
    for (int col : columns) picked.push_back(values[static_cast<std::size_t>(col)] > 0 ? 1 : 0);
    files.push_back(file);
    attrs.push_back(picked);
    if (max_items > 0 && static_cast<int>(files.size()) >= max_items) break;
  }
  if (files.empty()) throw IngestionError("no " + split + " images listed in " + attr_path.string());

  constexpr int kSide = 64;
  Dataset ds;
  ds.name = "celeba";
  ds.split = split;
  ds.num_classes = 2;
  ds.images = Tensor({static_cast<int>(files.size()), 3, kSide, kSide});
  const std::size_t per = 3 * kSide * kSide;
  for (std::size_t i = 0; i < files.size(); ++i) {
    decode_celeba_jpeg(img_dir / files[i], kSide, ds.images.data() + i * per);
    ds.labels.push_back(attrs[i][1]);
  }
  ds.attributes = std::move(attrs);
  return ds;
}

}  // namespace

Dataset load_dataset(const std::string& name, const fs::path& root, const std::string& split, int max_items) {
  if (split != "train" && split != "test") throw UsageError("split must be train or test, got '" + split + "'");
  Dataset ds;
  if (name == "fashion_mnist" || name == "fmnist") {
    ds = load_fashion_mnist(root, split, max_items);
  } else if (name == "cifar10") {
    ds = load_cifar10(root, split, max_items);
  } else if (name == "celeba") {
    ds = load_celeba(root, split, max_items);
  } else {
    throw UsageError("unknown dataset '" + name + "' (expected fashion_mnist|cifar10|celeba)");
  }
  ds.check_invariants();
  return ds;
}

std::vector<std::vector<int>> batch_iter(int n, int batch_size, std::uint64_t seed, std::uint64_t epoch,
                                         bool shuffle) {
  require(n >= 1, "batch_iter over an empty dataset");
  if (batch_size < 1) throw UsageError("batch_size must be >= 1");
  if (batch_size > n)
    throw UsageError("batch_size " + std::to_string(batch_size) + " exceeds dataset size " + std::to_string(n));
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  if (shuffle) {
    Rng rng(derive_seed(seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<std::vector<int>> batches;
  for (int start = 0; start < n; start += batch_size)
    batches.emplace_back(order.begin() + start, order.begin() + std::min(n, start + batch_size));
  return batches;
}

void split_indices(int n, double held_out_fraction, std::uint64_t seed, std::vector<int>& train,
                   std::vector<int>& held_out) {
  require(held_out_fraction > 0.0 && held_out_fraction < 1.0, "held-out fraction must be in (0, 1)");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const int k = std::max(1, static_cast<int>(n * held_out_fraction));
  require(k < n, "held-out split leaves no training items");
  held_out.assign(order.begin(), order.begin() + k);
  train.assign(order.begin() + k, order.end());
  std::sort(held_out.begin(), held_out.end());
  std::sort(train.begin(), train.end());
}

}  // namespace ppsvae
