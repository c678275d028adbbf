#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "vsanet/stdct.hpp"

namespace vsanet::io {

enum class WavEncoding { kPcm16, kFloat32 };

/// Reads a mono 16 kHz RIFF/WAVE file (PCM16 or IEEE float32, plain or
/// WAVE_FORMAT_EXTENSIBLE). Throws UnsupportedRate for other rates and
/// UnsupportedFormat for anything else it cannot represent.
dsp::Waveform read_wav(const std::filesystem::path& path);
dsp::Waveform decode_wav(std::string_view bytes);

/// PCM16 samples are scaled by 32768, rounded and clipped to [-32768, 32767].
void write_wav(const std::filesystem::path& path, const dsp::Waveform& wave,
               WavEncoding encoding = WavEncoding::kFloat32);
std::string encode_wav(const dsp::Waveform& wave, WavEncoding encoding = WavEncoding::kFloat32);

}  // namespace vsanet::io
