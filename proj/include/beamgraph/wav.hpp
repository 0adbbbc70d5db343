#pragma once

#include <string>

#include "beamgraph/signal.hpp"

namespace beamgraph {

enum class WavFormat { kPcm16, kFloat32 };

// RIFF/WAVE, little-endian. PCM16 and FLOAT32 only; everything else errors.
MultichannelSignal wav_read(const std::string& path);
void wav_write(const std::string& path, const MultichannelSignal& sig,
               WavFormat format = WavFormat::kFloat32);

}  // namespace beamgraph
