#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace mvqa {

struct FeatureDims {
  int video = 0;  // D_v
  int bbox = 0;   // D_b
  bool operator==(const FeatureDims&) const = default;
};

// One annotated character inside a frame: appearance feature plus the
// symbolic labels (who, doing what, feeling how).
struct CharacterAnnotation {
  std::vector<double> box_feature;
  std::string person;
  std::string behavior;
  std::string emotion;
  bool operator==(const CharacterAnnotation&) const = default;
};

struct Frame {
  std::vector<double> frame_feature;
  std::vector<CharacterAnnotation> characters;
  bool operator==(const Frame&) const = default;
};

struct Subtitle {
  std::string speaker;
  std::string text;
  bool operator==(const Subtitle&) const = default;
};

struct QAExample {
  std::string qid;
  std::vector<Frame> frames;
  std::vector<Subtitle> subtitles;
  std::string question;
  std::string answer;
  bool operator==(const QAExample&) const = default;
};

enum class Split { kTrain, kVal, kTest };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct Corpus {
  std::vector<QAExample> examples;
  FeatureDims feature_dims;
  Split split = Split::kTrain;
  bool operator==(const Corpus&) const = default;
};

template <class T>
struct Range {
  T lo;
  T hi;
};

struct SyntheticConfig {
  int n_examples = 100;
  int n_persons = 6;
  int n_behaviors = 8;
  int n_emotions = 6;
  Range<int> frames_per_clip{2, 4};
  Range<int> chars_per_frame{1, 2};
  Range<int> subtitles_per_clip{2, 4};
  FeatureDims feature_dims{32, 32};
  std::uint64_t seed = 7;
  // Fraction of questions answerable only from visual metadata.
  double metadata_signal = 0.7;
  // Noise added on top of the label-determined box feature.
  double bbox_noise = 0.5;
  Split split = Split::kTrain;
};

// Returns one message per broken invariant, e.g. "frames[0].frame_feature: ...".
std::vector<std::string> validate_example(const QAExample& ex, FeatureDims dims);

// Throws DataError naming the first offending qid; checks qid uniqueness too.
void validate_corpus(const Corpus& corpus);

// JSON-lines: a header line with feature_dims/split, then one example per line.
Corpus read_corpus(std::istream& in);
Corpus load_corpus(const std::filesystem::path& path);
void write_corpus(std::ostream& out, const Corpus& corpus);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);
std::string serialize_corpus(const Corpus& corpus);

Corpus generate_synthetic(const SyntheticConfig& cfg);

// Splits in example order into consecutive chunks of the given sizes.
std::vector<Corpus> split_corpus(const Corpus& corpus, const std::vector<std::size_t>& sizes);

// Label vocabularies used by the synthetic generator (first n of each list).
const std::vector<std::string>& synthetic_persons();
const std::vector<std::string>& synthetic_behaviors();
const std::vector<std::string>& synthetic_emotions();

// True when the question was produced by a metadata template.
bool is_metadata_question(const QAExample& ex);

struct CorpusStats {
  std::size_t examples = 0;
  std::size_t metadata_questions = 0;
  // Sums and extrema of N, M, I (characters per frame), J (words per subtitle), L.
  struct Summary {
    std::size_t count = 0;
    double sum = 0;
    double min = 0;
    double max = 0;
    void add(double v);
    double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
  };
  Summary frames, subtitles, characters, subtitle_words, question_words, answer_words;
};

CorpusStats corpus_stats(const Corpus& corpus);
std::string format_stats(const CorpusStats& stats);

}  // namespace mvqa
