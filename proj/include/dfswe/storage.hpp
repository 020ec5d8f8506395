#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dfswe/circulation.hpp"
#include "dfswe/glow.hpp"
#include "dfswe/image.hpp"

namespace dfswe {

namespace fs = std::filesystem;

// ------------------------------------------------------------------ images

/// Reads PNG (8 or 16 bit, gray/RGB, alpha dropped) or JPEG.
QuantizedImage read_image(const fs::path& path);

/// Writes a lossless PNG at the image's bit depth (8 or 16). Any other
/// extension is refused: stego images must survive bit-exactly.
void write_image(const fs::path& path, const QuantizedImage& img);

// ------------------------------------------------------------- checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 1, f64 = 2, i32 = 3 };

struct WeightRecord {
  std::string name;
  DType dtype = DType::f32;
  std::vector<std::int64_t> shape;
  std::vector<std::byte> bytes;  // little-endian
};

/// Raw container: magic "DFSWE", u32 version, u64 header length + canonical
/// JSON header, u32 record count, records (u32 name length, name, u8 dtype,
/// u32 ndim, i64 dims..., u64 byte count, bytes), trailing CRC-32 of all
/// preceding bytes. All integers little-endian.
struct CheckpointFile {
  nlohmann::json header;
  std::vector<WeightRecord> records;
};

std::vector<std::byte> encode_checkpoint(const CheckpointFile& file);
CheckpointFile decode_checkpoint(std::span<const std::byte> bytes);
void write_checkpoint_file(const fs::path& path, const CheckpointFile& file);
CheckpointFile read_checkpoint_file(const fs::path& path);

WeightRecord make_record(const std::string& name, const RowMat<float>& m);
RowMat<float> record_matrix(const WeightRecord& r);

/// Model parameters as records in GlowParams::visit order.
std::vector<WeightRecord> model_records(const GlowModel& model);
CheckpointFile model_checkpoint(const GlowModel& model, const nlohmann::json& train_config = {});
GlowModel model_from_checkpoint(const CheckpointFile& file);

void save_checkpoint(const GlowModel& model, const fs::path& path,
                     const nlohmann::json& train_config = {});
GlowModel load_checkpoint(const fs::path& path);

// ---------------------------------------------------------------- receipts

nlohmann::json receipt_to_json(const HideReceipt& r);
HideReceipt receipt_from_json(const nlohmann::json& j);
std::string serialize_receipt(const HideReceipt& r);
HideReceipt parse_receipt(const std::string& text);
void write_receipt(const fs::path& path, const HideReceipt& r);
HideReceipt read_receipt(const fs::path& path);

// ------------------------------------------------------------------ helpers

/// Writes to a temporary sibling and renames over `path`.
void write_file_atomic(const fs::path& path, std::span<const std::byte> bytes);
void write_text_atomic(const fs::path& path, const std::string& text);
std::vector<std::byte> read_file(const fs::path& path);

}  // namespace dfswe
