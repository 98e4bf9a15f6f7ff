#ifndef DEMLOOP_CODEC_HPP
#define DEMLOOP_CODEC_HPP

#include <cstdint>
#include <vector>

#include "demloop/dem.hpp"

namespace demloop {

/// Spatial latent descriptor: C channels of w x h pooled block statistics.
/// Channel layout (see encode): 0 = block max height, 1 = mean over valid,
/// 2 = valid fraction (the mask channel), 3..6 = 2x2 sub-block maxima
/// (quadrants [y0x0, y0x1, y1x0, y1x1]).
struct LatentGrid {
    int channels = 0;
    int width = 0;
    int height = 0;
    double quant_step = 0.0;
    std::vector<Eigen::ArrayXXd> values; // one (height x width) array per channel

    static constexpr int kMaskChannel = 2;
    static constexpr double kValidThreshold = 0.05;

    const Eigen::ArrayXXd& mask() const { return values[kMaskChannel]; }
};

struct CodecConfig {
    int block = 10;     // DEM cells per latent cell side
    int quant_bits = 8; // 1..16
};

/// Packet metadata carried alongside the latent for loop closure.
struct PacketMeta {
    DemConfig dem_config;
    Rpy r_rp;          // canonicalizing roll/pitch (yaw is zero by construction)
    double z_offset = 0.0;
};

/// Deterministic pooled-statistics encoder (block-quantized, C=7 channels).
LatentGrid encode(const Dem& dem, const CodecConfig& cfg);

/// Reconstruct a DEM from quadrant maxima; block mask from the thresholded
/// valid-fraction channel.
Dem decode(const LatentGrid& latent, const DemConfig& dem_cfg);

/// Bit-exact little-endian wire form:
///   magic "DEML", version u8, dem config, plane meta, dims, quant_step,
///   RLE block mask, quantized coefficients, crc32.
std::vector<std::uint8_t> serialize(const LatentGrid& latent, const PacketMeta& meta);

struct DecodedPacket {
    LatentGrid latent;
    PacketMeta meta;
};

/// Throws "bad magic" / "bad version" / "bad crc" / "bad packet".
DecodedPacket deserialize(const std::vector<std::uint8_t>& bytes);

/// Raw scan bytes (16 per point) over packet bytes.
double compression_ratio(const PointCloud& raw_cloud, const std::vector<std::uint8_t>& packet);

} // namespace demloop

#endif
