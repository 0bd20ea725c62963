#pragma once

#include "otpel/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

namespace otpel::data {

struct Spectrogram {
    size_t frames = 0;
    size_t bins = 0;
    std::vector<double> values; // row-major [frames x bins]

    double at(size_t f, size_t b) const { return values[f * bins + b]; }
};

Spectrogram to_spectrogram(const Tensor& t);
Tensor to_tensor(const Spectrogram& s);

struct Utterance {
    std::vector<int> tokens;
    Spectrogram spec; // frames == tokens.size() * expansion_factor
};

struct Corpus {
    std::vector<Utterance> utterances;
    size_t size() const { return utterances.size(); }
};

enum class Accent { source, target };

// Two accents share one generative process: per-token spectral templates,
// with the target accent passing its templates through a fixed invertible
// mel-bin mixing map plus a spectral tilt, and optionally jittering each
// token's temporal envelope. Zeroing all shift parameters makes the accents
// coincide bit for bit.
struct CorpusSpec {
    int vocab_size = 24;
    int n_utterances = 200;
    int len_min = 6;
    int len_max = 12;
    Accent accent = Accent::source;
    double shift_alpha = 0.35;     // strength of the rank-1 bin mixing
    double shift_tilt = 0.15;      // linear-in-bin offset scale
    double duration_jitter = 0.05; // envelope perturbation amplitude
    uint64_t jitter_seed = 99;
    uint64_t shift_seed = 4242;
    double noise_sigma = 0.01;
    uint64_t seed = 1;
    int n_mel = 20;
    int expansion_factor = 4;
};

// Per-token template bank, [vocab x expansion x mel] flattened. Exposed so
// tests can measure the source/target domain gap directly.
std::vector<double> token_templates(const CorpusSpec& spec);

Corpus generate(const CorpusSpec& spec);

// Seeded disjoint covering partition; errors when either side would be empty.
std::pair<Corpus, Corpus> split(const Corpus& corpus, double train_fraction, uint64_t seed);

void save_corpus(const std::filesystem::path& path, const Corpus& corpus);
Corpus load_corpus(const std::filesystem::path& path);

} // namespace otpel::data
