#include "demloop/codec.hpp"

#include <cmath>
#include <cstring>

#include "demloop/util.hpp"

namespace demloop {

namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'E', 'M', 'L'};
constexpr std::uint8_t kVersion = 1;

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.insert(out.end(), buf, buf + sizeof(T)); // host is little-endian
}

class Reader {
public:
    Reader(const std::vector<std::uint8_t>& bytes, std::size_t end)
        : data_(bytes.data()), end_(end) {}
    template <typename T>
    T get() {
        if (pos_ + sizeof(T) > end_) throw Error("bad packet", "truncated field");
        T v;
        std::memcpy(&v, data_ + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }
    std::size_t pos() const { return pos_; }

private:
    const std::uint8_t* data_;
    std::size_t end_;
    std::size_t pos_ = 0;
};

double quant_step_for(int bits) { return 1.0 / ((1u << bits) - 1u); }

} // namespace

LatentGrid encode(const Dem& dem, const CodecConfig& cfg) {
    const int n = dem.config.resolution;
    const int block = cfg.block;
    if (block <= 0 || n % block != 0)
        throw Error("bad config", "block must divide DEM resolution");
    if (cfg.quant_bits < 1 || cfg.quant_bits > 16)
        throw Error("bad config", "quant_bits must be in [1,16]");
    const int w = n / block;
    const int hb = block / 2; // quadrant split (second half gets the remainder)

    LatentGrid latent;
    latent.channels = 7;
    latent.width = w;
    latent.height = w;
    latent.quant_step = quant_step_for(cfg.quant_bits);
    latent.values.assign(7, Eigen::ArrayXXd::Zero(w, w));

    const double qmax = (1u << cfg.quant_bits) - 1u;
    auto quantize = [&](double v) {
        const double q = std::clamp(std::round(v * qmax), 0.0, qmax);
        return q * latent.quant_step;
    };

    for (int br = 0; br < w; ++br) {
        for (int bc = 0; bc < w; ++bc) {
            double vmax = 0.0, vsum = 0.0, quad[4] = {0, 0, 0, 0};
            int count = 0;
            for (int r = 0; r < block; ++r) {
                for (int c = 0; c < block; ++c) {
                    const int gr = br * block + r, gc = bc * block + c;
                    if (!dem.valid(gr, gc)) continue;
                    const double v = dem.heights(gr, gc);
                    ++count;
                    vsum += v;
                    vmax = std::max(vmax, v);
                    const int qi = (r >= hb ? 2 : 0) + (c >= hb ? 1 : 0);
                    quad[qi] = std::max(quad[qi], v);
                }
            }
            latent.values[0](br, bc) = quantize(vmax);
            latent.values[1](br, bc) = quantize(count ? vsum / count : 0.0);
            latent.values[2](br, bc) = quantize(static_cast<double>(count) / (block * block));
            for (int q = 0; q < 4; ++q) latent.values[3 + q](br, bc) = quantize(quad[q]);
        }
    }
    return latent;
}

Dem decode(const LatentGrid& latent, const DemConfig& dem_cfg) {
    const int n = dem_cfg.resolution;
    if (latent.width != latent.height || latent.width <= 0 || latent.channels != 7)
        throw Error("bad latent", "expected square 7-channel latent");
    if (n % latent.width != 0)
        throw Error("bad latent", "latent dims inconsistent with DEM resolution");
    const int block = n / latent.width;
    const int hb = block / 2;

    Dem dem;
    dem.config = dem_cfg;
    dem.heights = Eigen::ArrayXXd::Zero(n, n);
    dem.valid = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(n, n, false);
    for (int br = 0; br < latent.height; ++br) {
        for (int bc = 0; bc < latent.width; ++bc) {
            if (latent.values[LatentGrid::kMaskChannel](br, bc) <= LatentGrid::kValidThreshold)
                continue;
            for (int r = 0; r < block; ++r) {
                for (int c = 0; c < block; ++c) {
                    const int qi = (r >= hb ? 2 : 0) + (c >= hb ? 1 : 0);
                    dem.heights(br * block + r, bc * block + c) =
                        latent.values[3 + qi](br, bc);
                    dem.valid(br * block + r, bc * block + c) = true;
                }
            }
        }
    }
    return dem;
}

std::vector<std::uint8_t> serialize(const LatentGrid& latent, const PacketMeta& meta) {
    if (latent.quant_step <= 0.0) throw Error("bad latent", "missing quant step");
    if (static_cast<std::int64_t>(latent.width) * latent.height > 0xFFFF)
        throw Error("bad latent", "latent grid too large for u16 mask runs");
    const double qmaxd = 1.0 / latent.quant_step;
    const int bits = static_cast<int>(std::round(std::log2(qmaxd + 1.0)));
    const bool wide = bits > 8;

    std::vector<std::uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put<std::uint8_t>(out, kVersion);
    put<float>(out, static_cast<float>(meta.dem_config.extent));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.dem_config.resolution));
    put<float>(out, static_cast<float>(meta.dem_config.h_max));
    put<float>(out, static_cast<float>(meta.r_rp.roll));
    put<float>(out, static_cast<float>(meta.r_rp.pitch));
    put<float>(out, static_cast<float>(meta.r_rp.yaw));
    put<float>(out, static_cast<float>(meta.z_offset));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(latent.channels));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(latent.width));
    put<std::uint16_t>(out, static_cast<std::uint16_t>(latent.height));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(bits));
    put<double>(out, latent.quant_step);

    // Run-length coded block-valid mask, row-major, alternating runs
    // starting with an invalid run.
    const auto& mask = latent.mask();
    std::vector<std::uint32_t> runs;
    bool cur = false;
    std::uint32_t len = 0;
    for (int r = 0; r < latent.height; ++r) {
        for (int c = 0; c < latent.width; ++c) {
            const bool v = mask(r, c) > LatentGrid::kValidThreshold;
            if (v == cur) {
                ++len;
            } else {
                runs.push_back(len);
                cur = v;
                len = 1;
            }
        }
    }
    runs.push_back(len);
    // run lengths fit u16: the block grid is at most 256x256
    put<std::uint16_t>(out, static_cast<std::uint16_t>(runs.size()));
    for (auto rl : runs) put<std::uint16_t>(out, static_cast<std::uint16_t>(rl));

    for (int ch = 0; ch < latent.channels; ++ch) {
        for (int r = 0; r < latent.height; ++r) {
            for (int c = 0; c < latent.width; ++c) {
                const auto q = static_cast<std::uint32_t>(
                    std::lround(latent.values[ch](r, c) * qmaxd));
                if (wide)
                    put<std::uint16_t>(out, static_cast<std::uint16_t>(q));
                else
                    put<std::uint8_t>(out, static_cast<std::uint8_t>(q));
            }
        }
    }
    put<std::uint32_t>(out, crc32(out.data(), out.size()));
    return out;
}

DecodedPacket deserialize(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < 8) throw Error("bad packet", "too short");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw Error("bad magic");
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    if (crc32(bytes.data(), bytes.size() - 4) != stored_crc) throw Error("bad crc");

    Reader rd(bytes, bytes.size() - 4);
    std::uint8_t magic[4];
    for (auto& m : magic) m = rd.get<std::uint8_t>();
    if (rd.get<std::uint8_t>() != kVersion) throw Error("bad version");

    DecodedPacket pkt;
    pkt.meta.dem_config.extent = rd.get<float>();
    pkt.meta.dem_config.resolution = static_cast<int>(rd.get<std::uint32_t>());
    pkt.meta.dem_config.h_max = rd.get<float>();
    pkt.meta.r_rp.roll = rd.get<float>();
    pkt.meta.r_rp.pitch = rd.get<float>();
    pkt.meta.r_rp.yaw = rd.get<float>();
    pkt.meta.z_offset = rd.get<float>();
    auto& latent = pkt.latent;
    latent.channels = rd.get<std::uint16_t>();
    latent.width = rd.get<std::uint16_t>();
    latent.height = rd.get<std::uint16_t>();
    const int bits = rd.get<std::uint8_t>();
    latent.quant_step = rd.get<double>();
    if (latent.channels == 0 || latent.width == 0 || latent.height == 0 ||
        bits < 1 || bits > 16 || latent.quant_step <= 0.0)
        throw Error("bad packet", "invalid dims");

    const std::uint16_t n_runs = rd.get<std::uint16_t>();
    std::uint64_t total = 0;
    for (std::uint32_t i = 0; i < n_runs; ++i) total += rd.get<std::uint16_t>();
    if (total != static_cast<std::uint64_t>(latent.width) * latent.height)
        throw Error("bad packet", "mask run length mismatch");

    const bool wide = bits > 8;
    latent.values.assign(latent.channels, Eigen::ArrayXXd::Zero(latent.height, latent.width));
    for (int ch = 0; ch < latent.channels; ++ch)
        for (int r = 0; r < latent.height; ++r)
            for (int c = 0; c < latent.width; ++c) {
                const std::uint32_t q = wide ? rd.get<std::uint16_t>() : rd.get<std::uint8_t>();
                latent.values[ch](r, c) = q * latent.quant_step;
            }
    if (rd.pos() != bytes.size() - 4) throw Error("bad packet", "trailing bytes");
    return pkt;
}

double compression_ratio(const PointCloud& raw_cloud, const std::vector<std::uint8_t>& packet) {
    if (packet.empty()) throw Error("bad packet", "empty");
    return 16.0 * static_cast<double>(raw_cloud.size()) / static_cast<double>(packet.size());
}

} // namespace demloop
