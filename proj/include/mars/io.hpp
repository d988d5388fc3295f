#pragma once
// Little-endian binary formats, the JSONL manifest and the debiased centroid
// file.
//
//   MARSFT01  u32 D, u32 H, u32 W, f32[D*H*W]           feature map, [D][H][W]
//   MARSLB01  u32 H, u32 W, i16[H*W]                    label map
//   MARSCB01  u32 D, u32 k_fg, u32 k_bg, u32 count, then per centroid:
//             i32 class_id, u32 cluster_index, u32 member_count,
//             u32 id_len, id bytes, f64[D]              centroid bank
//   MARSHD01  u32 C+1, u32 D, f64 weights[C+1][D], f64 bias[C+1]
//
// Spatial dims and D are capped at 2^16.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "mars/bank.hpp"
#include "mars/core.hpp"
#include "mars/select.hpp"
#include "mars/trainloop.hpp"

namespace mars {

class FormatError : public Error {
public:
    FormatError(const std::string& what, std::size_t offset);
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

inline constexpr uint32_t kMaxDim = 1u << 16;

std::string encode_feature_map(const FeatureMap& f);
FeatureMap decode_feature_map(std::string_view bytes);

std::string encode_label_map(const LabelMap& y);
// Values outside [-1, num_classes] are rejected.
LabelMap decode_label_map(std::string_view bytes, int num_classes);

std::string encode_bank(const CentroidBank& bank);
CentroidBank decode_bank(std::string_view bytes);

std::string encode_head(const SegHead& head);
SegHead decode_head(std::string_view bytes);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it into place.
void write_text_atomic(const std::filesystem::path& path, std::string_view contents);

void write_feature_map(const std::filesystem::path& path, const FeatureMap& f);
FeatureMap read_feature_map(const std::filesystem::path& path);
void write_label_map(const std::filesystem::path& path, const LabelMap& y);
LabelMap read_label_map(const std::filesystem::path& path, int num_classes);
void write_bank(const std::filesystem::path& path, const CentroidBank& bank);
CentroidBank read_bank(const std::filesystem::path& path);
void write_head(const std::filesystem::path& path, const SegHead& head);
SegHead read_head(const std::filesystem::path& path);

// Line-delimited JSON: a header line {"num_classes", "embedding_dim"} followed by
// one record per line. Relative paths resolve against the manifest's directory.
std::string encode_manifest(const DatasetManifest& manifest);
DatasetManifest decode_manifest(std::string_view text, const std::filesystem::path& base_dir = {});
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

std::string encode_centroid_set(const DebiasedCentroidSet& set);
DebiasedCentroidSet decode_centroid_set(std::string_view text);
void write_centroid_set(const std::filesystem::path& path, const DebiasedCentroidSet& set);
DebiasedCentroidSet read_centroid_set(const std::filesystem::path& path);

}  // namespace mars
