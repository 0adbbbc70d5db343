#include "beamgraph/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace beamgraph {

namespace {

void put_u32(std::string& s, uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, uint16_t v) {
    for (int i = 0; i < 2; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
    return p[0] | (p[1] << 8) | (p[2] << 16) | (uint32_t(p[3]) << 24);
}
uint16_t get_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

}  // namespace

MultichannelSignal wav_read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "wav_read: cannot open " + path);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const uint8_t* p = reinterpret_cast<const uint8_t*>(raw.data());
    const size_t n = raw.size();

    require(n >= 12 && std::memcmp(p, "RIFF", 4) == 0 && std::memcmp(p + 8, "WAVE", 4) == 0,
            "wav_read: not a RIFF/WAVE file: " + path);

    uint16_t format_tag = 0, channels = 0, bits = 0;
    uint32_t sample_rate = 0;
    const uint8_t* data = nullptr;
    uint32_t data_len = 0;
    bool have_fmt = false;

    size_t off = 12;
    while (off + 8 <= n) {
        const uint32_t chunk_len = get_u32(p + off + 4);
        require(off + 8 + chunk_len <= n, "wav_read: truncated chunk in " + path);
        if (std::memcmp(p + off, "fmt ", 4) == 0) {
            require(chunk_len >= 16, "wav_read: malformed fmt chunk");
            format_tag = get_u16(p + off + 8);
            channels = get_u16(p + off + 10);
            sample_rate = get_u32(p + off + 12);
            bits = get_u16(p + off + 22);
            have_fmt = true;
        } else if (std::memcmp(p + off, "data", 4) == 0) {
            data = p + off + 8;
            data_len = chunk_len;
        }
        off += 8 + chunk_len + (chunk_len & 1);
    }
    require(have_fmt && data, "wav_read: missing fmt or data chunk in " + path);
    require(channels >= 1 && sample_rate > 0, "wav_read: malformed header");

    const bool pcm16 = format_tag == 1 && bits == 16;
    const bool f32 = format_tag == 3 && bits == 32;
    require(pcm16 || f32, "wav_read: unsupported codec (only PCM16 and FLOAT32)");

    const uint32_t bytes_per_sample = bits / 8;
    const uint32_t frame_bytes = bytes_per_sample * channels;
    require(data_len % frame_bytes == 0, "wav_read: data size not a whole number of frames");
    const uint32_t num_frames = data_len / frame_bytes;

    MultichannelSignal sig;
    sig.ref_index = 0;
    sig.channels.resize(channels);
    for (auto& ch : sig.channels) {
        ch.sample_rate = static_cast<int>(sample_rate);
        ch.samples.resize(num_frames);
    }
    for (uint32_t i = 0; i < num_frames; ++i) {
        for (uint16_t c = 0; c < channels; ++c) {
            const uint8_t* s = data + (static_cast<size_t>(i) * channels + c) * bytes_per_sample;
            if (pcm16) {
                const int16_t v = static_cast<int16_t>(get_u16(s));
                sig.channels[c].samples[i] = v / 32768.0;
            } else {
                uint32_t u = get_u32(s);
                float fv;
                std::memcpy(&fv, &u, 4);
                sig.channels[c].samples[i] = fv;
            }
        }
    }
    return sig;
}

void wav_write(const std::string& path, const MultichannelSignal& sig, WavFormat format) {
    require(!sig.channels.empty(), "wav_write: no channels");
    for (const auto& ch : sig.channels)
        require(ch.length() == sig.length(), "wav_write: channel lengths differ");

    const uint16_t channels = static_cast<uint16_t>(sig.num_channels());
    const uint32_t frames = static_cast<uint32_t>(sig.length());
    const bool f32 = format == WavFormat::kFloat32;
    const uint16_t bits = f32 ? 32 : 16;
    const uint32_t frame_bytes = channels * bits / 8;
    const uint32_t data_len = frames * frame_bytes;
    // FLOAT32 carries the 18-byte fmt chunk plus a fact chunk.
    const uint32_t fmt_len = f32 ? 18 : 16;
    const uint32_t fact_len = f32 ? 12 : 0;
    const uint32_t riff_len = 4 + (8 + fmt_len) + fact_len + (8 + data_len);

    std::string out;
    out.reserve(riff_len + 8);
    out += "RIFF";
    put_u32(out, riff_len);
    out += "WAVE";
    out += "fmt ";
    put_u32(out, fmt_len);
    put_u16(out, f32 ? 3 : 1);
    put_u16(out, channels);
    put_u32(out, static_cast<uint32_t>(sig.sample_rate()));
    put_u32(out, static_cast<uint32_t>(sig.sample_rate()) * frame_bytes);
    put_u16(out, static_cast<uint16_t>(frame_bytes));
    put_u16(out, bits);
    if (f32) {
        put_u16(out, 0);  // cbSize
        out += "fact";
        put_u32(out, 4);
        put_u32(out, frames);
    }
    out += "data";
    put_u32(out, data_len);

    for (uint32_t i = 0; i < frames; ++i) {
        for (uint16_t c = 0; c < channels; ++c) {
            const double v = sig.channels[c].samples[i];
            if (f32) {
                const float fv = static_cast<float>(v);
                uint32_t u;
                std::memcpy(&u, &fv, 4);
                put_u32(out, u);
            } else {
                const double clamped = std::clamp(v, -1.0, 32767.0 / 32768.0);
                const int16_t q = static_cast<int16_t>(std::lrint(clamped * 32768.0));
                put_u16(out, static_cast<uint16_t>(q));
            }
        }
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "wav_write: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    require(f.good(), "wav_write: write failed for " + path);
}

}  // namespace beamgraph
