#include "dfswe/storage.hpp"

#include <algorithm>
#include <bit>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <random>
#include <unordered_map>

#include <jpeglib.h>
#include <png.h>
#include <zlib.h>

namespace dfswe {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

// ------------------------------------------------------------------ helpers

std::vector<std::byte> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = std::streamoff(in.tellg());
  in.seekg(0);
  std::vector<std::byte> bytes(std::size_t(std::max<std::streamoff>(size, 0)));
  in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!in) throw IoError("failed reading " + path.string());
  return bytes;
}

void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes) {
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(std::random_device{}());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp);
    throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
  }
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::as_bytes(std::span(text.data(), text.size())));
}

// ------------------------------------------------------------------ images

namespace {

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return std::tolower(c); });
  return e;
}

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  ~PngReadGuard() { png_destroy_read_struct(&png, info ? &info : nullptr, nullptr); }
};

QuantizedImage read_png(const fs::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8))
    throw FormatError("not a PNG file: " + path.string());

  PngReadGuard g;
  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) throw IoError("png_create_read_struct failed");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw IoError("png_create_info_struct failed");

  struct Reader {
    const std::vector<std::byte>* data;
    std::size_t pos;
  } reader{&bytes, 0};
  png_set_read_fn(g.png, &reader, [](png_structp p, png_bytep out, png_size_t n) {
    auto* r = static_cast<Reader*>(png_get_io_ptr(p));
    if (r->pos + n > r->data->size()) png_error(p, "unexpected end of PNG data");
    std::memcpy(out, r->data->data() + r->pos, n);
    r->pos += n;
  });

  QuantizedImage img;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(g.png))) throw FormatError("corrupt PNG file: " + path.string());

  png_read_info(g.png, g.info);
  const int color = png_get_color_type(g.png, g.info);
  int depth = png_get_bit_depth(g.png, g.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(g.png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(g.png);
  if (png_get_valid(g.png, g.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(g.png);
  png_set_strip_alpha(g.png);
  png_read_update_info(g.png, g.info);

  const int channels = png_get_channels(g.png, g.info);
  depth = png_get_bit_depth(g.png, g.info);
  const int width = int(png_get_image_width(g.png, g.info));
  const int height = int(png_get_image_height(g.png, g.info));
  const std::size_t rowbytes = png_get_rowbytes(g.png, g.info);
  buffer.resize(rowbytes * height);
  rows.resize(height);
  for (int y = 0; y < height; ++y) rows[y] = buffer.data() + rowbytes * y;
  png_read_image(g.png, rows.data());
  png_read_end(g.png, nullptr);

  img = QuantizedImage(channels, height, width, depth == 16 ? 16 : 8);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < channels; ++c) {
        const std::size_t i = std::size_t(x) * channels + c;
        img.at(c, y, x) = depth == 16 ? std::uint16_t((rows[y][2 * i] << 8) | rows[y][2 * i + 1])
                                      : std::uint16_t(rows[y][i]);
      }
  return img;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

QuantizedImage read_jpeg(const fs::path& path) {
  const auto bytes = read_file(path);
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = [](j_common_ptr c) {
    std::longjmp(reinterpret_cast<JpegError*>(c->err)->jump, 1);
  };
  err.mgr.output_message = [](j_common_ptr) {};
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw FormatError("corrupt JPEG file: " + path.string());
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, reinterpret_cast<const unsigned char*>(bytes.data()),
               static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  if (cinfo.jpeg_color_space != JCS_GRAYSCALE) cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int channels = cinfo.output_components;
  QuantizedImage img(channels, int(cinfo.output_height), int(cinfo.output_width), 8);
  std::vector<unsigned char> row(std::size_t(cinfo.output_width) * channels);
  while (cinfo.output_scanline < cinfo.output_height) {
    const int y = int(cinfo.output_scanline);
    unsigned char* rp = row.data();
    jpeg_read_scanlines(&cinfo, &rp, 1);
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < channels; ++c) img.at(c, y, x) = row[std::size_t(x) * channels + c];
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

}  // namespace

QuantizedImage read_image(const fs::path& path) {
  const auto ext = lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  throw FormatError("unsupported image format '" + ext + "' (" + path.string() + ")");
}

void write_image(const fs::path& path, const QuantizedImage& img) {
  if (lower_ext(path) != ".png")
    throw FormatError("refusing to write " + path.string() +
                      ": only lossless PNG output is supported");
  if (img.bit_depth != 8 && img.bit_depth != 16)
    throw FormatError("PNG output supports bit depth 8 or 16, got " +
                      std::to_string(img.bit_depth));
  if (img.c != 1 && img.c != 3) throw FormatError("PNG output needs 1 or 3 channels");
  if (img.pixels.size() != std::size_t(img.c) * img.h * img.w)
    throw ShapeError("image buffer does not match its dimensions");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  std::vector<std::byte> out;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("PNG encoding failed for " + path.string());
  }
  png_set_write_fn(
      png, &out,
      [](png_structp p, png_bytep data, png_size_t n) {
        auto* v = static_cast<std::vector<std::byte>*>(png_get_io_ptr(p));
        const auto* b = reinterpret_cast<const std::byte*>(data);
        v->insert(v->end(), b, b + n);
      },
      [](png_structp) {});
  png_set_IHDR(png, info, png_uint_32(img.w), png_uint_32(img.h), img.bit_depth,
               img.c == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  const std::size_t bpp = img.bit_depth == 16 ? 2 : 1;
  const std::size_t rowbytes = std::size_t(img.w) * img.c * bpp;
  buffer.resize(rowbytes * img.h);
  rows.resize(img.h);
  for (int y = 0; y < img.h; ++y) {
    rows[y] = buffer.data() + rowbytes * y;
    for (int x = 0; x < img.w; ++x)
      for (int c = 0; c < img.c; ++c) {
        const std::size_t i = std::size_t(x) * img.c + c;
        const std::uint16_t v = img.at(c, y, x);
        if (bpp == 2) {
          rows[y][2 * i] = png_byte(v >> 8);
          rows[y][2 * i + 1] = png_byte(v & 0xff);
        } else {
          rows[y][i] = png_byte(v);
        }
      }
  }
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  write_file_atomic(path, out);
}

// ------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[5] = {'D', 'F', 'S', 'W', 'E'};

class ByteWriter {
public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::byte*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void put_bytes(std::span<const std::byte> b) { out.insert(out.end(), b.begin(), b.end()); }
  void put_string(const std::string& s) {
    put_bytes(std::as_bytes(std::span(s.data(), s.size())));
  }
  std::vector<std::byte> out;
};

class ByteReader {
public:
  explicit ByteReader(std::span<const std::byte> b) : bytes(b) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  std::span<const std::byte> take(std::uint64_t n) {
    need(n);
    auto s = bytes.subspan(pos, n);
    pos += n;
    return s;
  }
  std::size_t remaining() const { return bytes.size() - pos; }

private:
  void need(std::uint64_t n) const {
    if (n > bytes.size() - pos) throw FormatError("checkpoint is truncated");
  }
  std::span<const std::byte> bytes;
  std::size_t pos = 0;
};

std::size_t dtype_size(DType t) {
  switch (t) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::i32: return 4;
  }
  throw FormatError("unknown dtype");
}

std::uint32_t crc_of(std::span<const std::byte> b) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < b.size()) {
    const auto chunk = std::min<std::size_t>(b.size() - pos, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(b.data() + pos), uInt(chunk));
    pos += chunk;
  }
  return std::uint32_t(crc);
}

}  // namespace

std::vector<std::byte> encode_checkpoint(const CheckpointFile& file) {
  ByteWriter w;
  w.put_bytes(std::as_bytes(std::span(kMagic)));
  w.put<std::uint32_t>(kCheckpointVersion);
  const std::string header = file.header.dump();
  w.put<std::uint64_t>(header.size());
  w.put_string(header);
  w.put<std::uint32_t>(std::uint32_t(file.records.size()));
  for (const auto& r : file.records) {
    w.put<std::uint32_t>(std::uint32_t(r.name.size()));
    w.put_string(r.name);
    w.put<std::uint8_t>(std::uint8_t(r.dtype));
    w.put<std::uint32_t>(std::uint32_t(r.shape.size()));
    std::int64_t count = 1;
    for (auto d : r.shape) {
      w.put<std::int64_t>(d);
      count *= d;
    }
    if (std::uint64_t(count) * dtype_size(r.dtype) != r.bytes.size())
      throw FormatError("record " + r.name + " byte count does not match its shape");
    w.put<std::uint64_t>(r.bytes.size());
    w.put_bytes(r.bytes);
  }
  w.put<std::uint32_t>(crc_of(w.out));
  return std::move(w.out);
}

CheckpointFile decode_checkpoint(std::span<const std::byte> bytes) {
  if (bytes.size() < sizeof(kMagic) + 4 + 4) throw ChecksumError("checkpoint is too short");
  const auto body = bytes.first(bytes.size() - 4);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  if (crc_of(body) != stored) throw ChecksumError("checkpoint checksum mismatch");

  ByteReader r(body);
  const auto magic = r.take(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
    throw FormatError("not a DFSWE checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw VersionError("checkpoint format version " + std::to_string(version) +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  CheckpointFile file;
  const auto header_len = r.get<std::uint64_t>();
  const auto header = r.take(header_len);
  try {
    file.header = nlohmann::json::parse(reinterpret_cast<const char*>(header.data()),
                                        reinterpret_cast<const char*>(header.data()) + header.size());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    WeightRecord rec;
    const auto name_len = r.get<std::uint32_t>();
    const auto name = r.take(name_len);
    rec.name.assign(reinterpret_cast<const char*>(name.data()), name.size());
    rec.dtype = DType(r.get<std::uint8_t>());
    const auto ndim = r.get<std::uint32_t>();
    std::int64_t elems = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      rec.shape.push_back(r.get<std::int64_t>());
      if (rec.shape.back() < 0) throw FormatError("negative dimension in " + rec.name);
      elems *= rec.shape.back();
    }
    const auto nbytes = r.get<std::uint64_t>();
    if (nbytes != std::uint64_t(elems) * dtype_size(rec.dtype))
      throw FormatError("record " + rec.name + " byte count does not match its shape");
    const auto data = r.take(nbytes);
    rec.bytes.assign(data.begin(), data.end());
    file.records.push_back(std::move(rec));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after checkpoint records");
  return file;
}

void write_checkpoint_file(const fs::path& path, const CheckpointFile& file) {
  write_file_atomic(path, encode_checkpoint(file));
}

CheckpointFile read_checkpoint_file(const fs::path& path) {
  return decode_checkpoint(read_file(path));
}

WeightRecord make_record(const std::string& name, const RowMat<float>& m) {
  WeightRecord r;
  r.name = name;
  r.dtype = DType::f32;
  r.shape = {m.rows(), m.cols()};
  const auto* p = reinterpret_cast<const std::byte*>(m.data());
  r.bytes.assign(p, p + m.size() * sizeof(float));
  return r;
}

RowMat<float> record_matrix(const WeightRecord& r) {
  if (r.dtype != DType::f32 || r.shape.size() != 2)
    throw FormatError("record " + r.name + " is not a 2-d float32 array");
  RowMat<float> m(r.shape[0], r.shape[1]);
  std::memcpy(m.data(), r.bytes.data(), r.bytes.size());
  return m;
}

std::vector<WeightRecord> model_records(const GlowModel& model) {
  std::vector<WeightRecord> out;
  model.params().visit([&](const std::string& name, const RowMat<float>& m, bool) {
    out.push_back(make_record(name, m));
  });
  return out;
}

CheckpointFile model_checkpoint(const GlowModel& model, const nlohmann::json& train_config) {
  CheckpointFile f;
  f.header = {{"format", "dfswe-checkpoint"},
              {"glow", model.config()},
              {"actnorm_initialized", model.actnorm_initialized()},
              {"train", train_config.is_null() ? nlohmann::json::object() : train_config}};
  f.records = model_records(model);
  return f;
}

GlowModel model_from_checkpoint(const CheckpointFile& file) {
  GlowConfig cfg;
  bool initialized = false;
  try {
    cfg = file.header.at("glow").get<GlowConfig>();
    initialized = file.header.value("actnorm_initialized", false);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header is missing the model config: ") + e.what());
  }
  cfg.validate();
  if (file.records.empty()) throw FormatError("checkpoint contains a config but no weights");

  // Build the parameter skeleton, then fill it by name.
  GlowParams<float> params = GlowModel(cfg, 0).params();
  std::size_t filled = 0;
  std::unordered_map<std::string, const WeightRecord*> by_name;
  for (const auto& r : file.records) by_name[r.name] = &r;
  params.visit([&](const std::string& name, RowMat<float>& m, bool) {
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("checkpoint is missing weight " + name);
    auto loaded = record_matrix(*it->second);
    if (loaded.rows() != m.rows() || loaded.cols() != m.cols())
      throw FormatError("weight " + name + " has the wrong shape");
    m = std::move(loaded);
    ++filled;
  });
  (void)filled;
  return GlowModel(cfg, std::move(params), initialized);
}

void save_checkpoint(const GlowModel& model, const fs::path& path,
                     const nlohmann::json& train_config) {
  write_checkpoint_file(path, model_checkpoint(model, train_config));
}

GlowModel load_checkpoint(const fs::path& path) {
  return model_from_checkpoint(read_checkpoint_file(path));
}

// ---------------------------------------------------------------- receipts

nlohmann::json receipt_to_json(const HideReceipt& r) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : r.segments)
    segs.push_back({{"secret_index", s.secret_index},
                    {"block_index", s.block_index},
                    {"offset", s.offset},
                    {"length", s.length},
                    {"mean_src", s.params.mean_src},
                    {"std_src", s.params.std_src},
                    {"mean_tgt", s.params.mean_tgt},
                    {"std_tgt", s.params.std_tgt}});
  return {{"version", r.version},
          {"mode", to_string(r.mode)},
          {"k", r.k},
          {"plan_fingerprint", r.plan_fingerprint},
          {"seed", r.seed},
          {"temperature", r.temperature},
          {"tactics", {{"pks", r.tactics.pks}, {"hdsr", r.tactics.hdsr}, {"dct", r.tactics.dct}}},
          {"segments", segs}};
}

HideReceipt receipt_from_json(const nlohmann::json& j) {
  HideReceipt r;
  try {
    r.version = j.at("version").get<int>();
    if (r.version != 1)
      throw VersionError("receipt version " + std::to_string(r.version) + " is not supported");
    r.mode = receipt_mode_from_string(j.at("mode").get<std::string>());
    r.k = j.at("k").get<int>();
    r.plan_fingerprint = j.at("plan_fingerprint").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.temperature = j.at("temperature").get<double>();
    const auto& t = j.at("tactics");
    r.tactics = {t.at("pks").get<bool>(), t.at("hdsr").get<bool>(), t.at("dct").get<bool>()};
    for (const auto& s : j.at("segments")) {
      SegmentRecord rec;
      rec.secret_index = s.at("secret_index").get<int>();
      rec.block_index = s.at("block_index").get<int>();
      rec.offset = s.at("offset").get<std::int64_t>();
      rec.length = s.at("length").get<std::int64_t>();
      rec.params = {s.at("mean_src").get<double>(), s.at("std_src").get<double>(),
                    s.at("mean_tgt").get<double>(), s.at("std_tgt").get<double>()};
      r.segments.push_back(rec);
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed receipt: ") + e.what());
  }
  if (r.mode == ReceiptMode::keyless && !r.segments.empty())
    throw FormatError("keyless receipts must not carry segment scalars");
  return r;
}

std::string serialize_receipt(const HideReceipt& r) { return receipt_to_json(r).dump(2) + "\n"; }

HideReceipt parse_receipt(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("receipt is not valid JSON: ") + e.what());
  }
  return receipt_from_json(j);
}

void write_receipt(const fs::path& path, const HideReceipt& r) {
  write_text_atomic(path, serialize_receipt(r));
}

HideReceipt read_receipt(const fs::path& path) {
  const auto bytes = read_file(path);
  return parse_receipt(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
}

}  // namespace dfswe
