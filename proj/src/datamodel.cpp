#include "metavqa/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "metavqa/error.hpp"
#include "metavqa/random.hpp"
#include "metavqa/tokenizer.hpp"

namespace mvqa {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "val") return Split::kVal;
  if (s == "test") return Split::kTest;
  throw DataError("unknown split '" + s + "'");
}

namespace {

bool all_finite(const std::vector<double>& v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

void check_vector(std::vector<std::string>& out, const std::string& field,
                  const std::vector<double>& v, int dim) {
  if (static_cast<int>(v.size()) != dim) {
    out.push_back(field + ": has " + std::to_string(v.size()) + " entries, expected " +
                  std::to_string(dim));
  } else if (!all_finite(v)) {
    out.push_back(field + ": contains a non-finite entry");
  }
}

std::string frame_field(std::size_t n) { return "frames[" + std::to_string(n) + "]"; }

std::string char_field(std::size_t n, std::size_t i) {
  return frame_field(n) + ".characters[" + std::to_string(i) + "]";
}

// First dimension disagreement in an example, or empty.
std::string dimension_mismatch(const QAExample& ex, FeatureDims dims) {
  for (std::size_t n = 0; n < ex.frames.size(); ++n) {
    const auto& f = ex.frames[n];
    if (static_cast<int>(f.frame_feature.size()) != dims.video) {
      return frame_field(n) + ".frame_feature has " + std::to_string(f.frame_feature.size()) +
             " entries, expected " + std::to_string(dims.video);
    }
    for (std::size_t i = 0; i < f.characters.size(); ++i) {
      const auto& c = f.characters[i];
      if (static_cast<int>(c.box_feature.size()) != dims.bbox) {
        return char_field(n, i) + ".box_feature has " + std::to_string(c.box_feature.size()) +
               " entries, expected " + std::to_string(dims.bbox);
      }
    }
  }
  return {};
}

json to_json(const QAExample& ex) {
  json frames = json::array();
  for (const auto& f : ex.frames) {
    json chars = json::array();
    for (const auto& c : f.characters) {
      chars.push_back({{"box_feature", c.box_feature},
                       {"person", c.person},
                       {"behavior", c.behavior},
                       {"emotion", c.emotion}});
    }
    frames.push_back({{"frame_feature", f.frame_feature}, {"characters", std::move(chars)}});
  }
  json subs = json::array();
  for (const auto& s : ex.subtitles) subs.push_back({{"speaker", s.speaker}, {"text", s.text}});
  return {{"qid", ex.qid},
          {"frames", std::move(frames)},
          {"subtitles", std::move(subs)},
          {"question", ex.question},
          {"answer", ex.answer}};
}

QAExample example_from_json(const json& j) {
  QAExample ex;
  ex.qid = j.at("qid").get<std::string>();
  for (const auto& jf : j.at("frames")) {
    Frame f;
    f.frame_feature = jf.at("frame_feature").get<std::vector<double>>();
    for (const auto& jc : jf.at("characters")) {
      CharacterAnnotation c;
      c.box_feature = jc.at("box_feature").get<std::vector<double>>();
      c.person = jc.at("person").get<std::string>();
      c.behavior = jc.at("behavior").get<std::string>();
      c.emotion = jc.at("emotion").get<std::string>();
      f.characters.push_back(std::move(c));
    }
    ex.frames.push_back(std::move(f));
  }
  for (const auto& js : j.at("subtitles")) {
    ex.subtitles.push_back({js.at("speaker").get<std::string>(), js.at("text").get<std::string>()});
  }
  ex.question = j.at("question").get<std::string>();
  ex.answer = j.at("answer").get<std::string>();
  return ex;
}

}  // namespace

std::vector<std::string> validate_example(const QAExample& ex, FeatureDims dims) {
  std::vector<std::string> out;
  if (ex.qid.empty()) out.emplace_back("qid: empty");
  for (std::size_t n = 0; n < ex.frames.size(); ++n) {
    const auto& f = ex.frames[n];
    check_vector(out, frame_field(n) + ".frame_feature", f.frame_feature, dims.video);
    for (std::size_t i = 0; i < f.characters.size(); ++i) {
      const auto& c = f.characters[i];
      const auto base = char_field(n, i);
      check_vector(out, base + ".box_feature", c.box_feature, dims.bbox);
      if (c.person.empty()) out.push_back(base + ".person: empty");
      if (c.behavior.empty()) out.push_back(base + ".behavior: empty");
      if (c.emotion.empty()) out.push_back(base + ".emotion: empty");
    }
  }
  for (std::size_t m = 0; m < ex.subtitles.size(); ++m) {
    const auto base = "subtitles[" + std::to_string(m) + "]";
    if (ex.subtitles[m].speaker.empty()) out.push_back(base + ".speaker: empty");
    if (ex.subtitles[m].text.empty()) out.push_back(base + ".text: empty");
  }
  if (ex.question.empty()) out.emplace_back("question: empty");
  if (ex.answer.empty()) out.emplace_back("answer: empty");
  return out;
}

void validate_corpus(const Corpus& corpus) {
  std::set<std::string> seen;
  for (const auto& ex : corpus.examples) {
    if (auto msg = dimension_mismatch(ex, corpus.feature_dims); !msg.empty()) {
      throw DimensionError("qid " + ex.qid + ": " + msg);
    }
    auto violations = validate_example(ex, corpus.feature_dims);
    if (!violations.empty()) throw DataError("qid " + ex.qid + ": " + violations.front());
    if (!seen.insert(ex.qid).second) throw DataError("qid " + ex.qid + ": duplicate qid");
  }
}

Corpus read_corpus(std::istream& in) {
  Corpus corpus;
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), lineno);
    }
    try {
      if (!have_header) {
        const auto dims = j.at("feature_dims").get<std::vector<int>>();
        if (dims.size() != 2) throw ParseError("feature_dims must have two entries", lineno);
        corpus.feature_dims = {dims[0], dims[1]};
        corpus.split = split_from_string(j.at("split").get<std::string>());
        have_header = true;
        continue;
      }
      corpus.examples.push_back(example_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  validate_corpus(corpus);
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus " + path.string());
  try {
    return read_corpus(in);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + " " + e.what(), e.line());
  }
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
  json header = {{"feature_dims", {corpus.feature_dims.video, corpus.feature_dims.bbox}},
                 {"split", to_string(corpus.split)}};
  out << header.dump() << '\n';
  for (const auto& ex : corpus.examples) out << to_json(ex).dump() << '\n';
}

std::string serialize_corpus(const Corpus& corpus) {
  std::ostringstream os;
  write_corpus(os, corpus);
  return os.str();
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write corpus " + path.string());
  write_corpus(out, corpus);
}

std::vector<Corpus> split_corpus(const Corpus& corpus, const std::vector<std::size_t>& sizes) {
  std::vector<Corpus> parts;
  std::size_t at = 0;
  static constexpr Split kOrder[] = {Split::kTrain, Split::kVal, Split::kTest};
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    if (at + sizes[k] > corpus.examples.size()) throw UsageError("split sizes exceed corpus size");
    Corpus part;
    part.feature_dims = corpus.feature_dims;
    part.split = kOrder[std::min<std::size_t>(k, 2)];
    part.examples.assign(corpus.examples.begin() + static_cast<std::ptrdiff_t>(at),
                         corpus.examples.begin() + static_cast<std::ptrdiff_t>(at + sizes[k]));
    at += sizes[k];
    parts.push_back(std::move(part));
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

const std::vector<std::string>& synthetic_persons() {
  static const std::vector<std::string> v = {"haeyoung", "dokyung", "jinsang", "deogi",
                                             "hun",      "kyungsu", "sukyung", "jeongsuk",
                                             "taejin",   "anna",    "jiwon",   "minsu"};
  return v;
}

const std::vector<std::string>& synthetic_behaviors() {
  static const std::vector<std::string> v = {"cooking", "drinking", "reading", "walking",
                                             "sitting", "standing", "eating",  "sleeping",
                                             "dancing", "cleaning", "running", "hugging"};
  return v;
}

const std::vector<std::string>& synthetic_emotions() {
  static const std::vector<std::string> v = {"happy",   "sad",       "angry",  "surprised",
                                             "fearful", "disgusted", "neutral", "excited"};
  return v;
}

namespace {

const std::vector<std::string> kPlaces = {"park",    "office", "hospital", "school",
                                          "market",  "station", "cafe",    "library"};
const std::vector<std::string> kObjects = {"book",     "coffee", "ring", "letter",
                                           "umbrella", "phone",  "cake", "flower"};
const std::vector<std::string> kChatter = {
    "that sounds good",      "i do not know",      "please wait for me",
    "we need to talk",       "see you tomorrow",   "thank you so much",
    "are you sure about it", "let us go together", "why are you here",
    "it was a long day"};

std::string going_line(const std::string& place) { return "i am going to the " + place + " now"; }
std::string wanting_line(const std::string& object) { return "i really want the " + object; }

double quantize(double x) { return std::round(x * 1e4) / 1e4; }

std::vector<double> random_vector(Rng& rng, int dim, double scale) {
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (auto& x : v) x = rng.normal() * scale;
  return v;
}

struct CastMember {
  std::string person;
  std::string behavior;
  std::string emotion;
};

// Subtitle that is neither the key line nor mentions any metadata label.
Subtitle distractor(Rng& rng, const std::vector<std::string>& speakers,
                    const std::string& avoid_speaker, int avoid_kind) {
  std::string speaker = rng.pick(speakers);
  const int kind = static_cast<int>(rng.uniform_int(0, 2));
  // Templated lines from the key speaker would make the answer ambiguous.
  if (kind != 2 && (kind == avoid_kind || avoid_kind < 0) && speaker == avoid_speaker) {
    return {speaker, rng.pick(kChatter)};
  }
  switch (kind) {
    case 0: return {speaker, going_line(rng.pick(kPlaces))};
    case 1: return {speaker, wanting_line(rng.pick(kObjects))};
    default: return {speaker, rng.pick(kChatter)};
  }
}

}  // namespace

bool is_metadata_question(const QAExample& ex) {
  const auto& q = ex.question;
  auto ends_with = [&](std::string_view s) {
    return q.size() >= s.size() && q.compare(q.size() - s.size(), s.size(), s) == 0;
  };
  return (q.starts_with("what is ") && ends_with(" doing ?")) ||
         (q.starts_with("how does ") && ends_with(" feel ?"));
}

Corpus generate_synthetic(const SyntheticConfig& cfg) {
  if (cfg.n_examples < 1 || cfg.n_persons < 1 || cfg.n_behaviors < 1 || cfg.n_emotions < 1) {
    throw UsageError("synthetic config counts must be >= 1");
  }
  if (cfg.n_persons > static_cast<int>(synthetic_persons().size()) ||
      cfg.n_behaviors > static_cast<int>(synthetic_behaviors().size()) ||
      cfg.n_emotions > static_cast<int>(synthetic_emotions().size())) {
    throw UsageError("synthetic vocabulary size exceeds the built-in label lists");
  }
  if (!(cfg.metadata_signal >= 0.0 && cfg.metadata_signal <= 1.0)) {
    throw UsageError("metadata_signal must lie in [0,1]");
  }
  auto check_range = [](Range<int> r, int min_lo, const char* name) {
    if (r.lo < min_lo || r.hi < r.lo) throw UsageError(std::string("invalid range for ") + name);
  };
  check_range(cfg.frames_per_clip, 1, "frames_per_clip");
  check_range(cfg.chars_per_frame, 1, "chars_per_frame");
  check_range(cfg.subtitles_per_clip, 1, "subtitles_per_clip");
  if (cfg.feature_dims.video < 1 || cfg.feature_dims.bbox < 1) {
    throw UsageError("feature dims must be >= 1");
  }

  const std::vector<std::string> persons(synthetic_persons().begin(),
                                         synthetic_persons().begin() + cfg.n_persons);
  const std::vector<std::string> behaviors(synthetic_behaviors().begin(),
                                           synthetic_behaviors().begin() + cfg.n_behaviors);
  const std::vector<std::string> emotions(synthetic_emotions().begin(),
                                          synthetic_emotions().begin() + cfg.n_emotions);

  // Appearance prototypes: box_feature = person + behavior + emotion + noise.
  Rng proto_rng(derive_seed(cfg.seed, 1));
  const double proto_scale = 1.0 / std::sqrt(3.0);
  std::vector<std::vector<double>> person_proto, behavior_proto, emotion_proto;
  for (int i = 0; i < cfg.n_persons; ++i)
    person_proto.push_back(random_vector(proto_rng, cfg.feature_dims.bbox, proto_scale));
  for (int i = 0; i < cfg.n_behaviors; ++i)
    behavior_proto.push_back(random_vector(proto_rng, cfg.feature_dims.bbox, proto_scale));
  for (int i = 0; i < cfg.n_emotions; ++i)
    emotion_proto.push_back(random_vector(proto_rng, cfg.feature_dims.bbox, proto_scale));
  auto index_of = [](const std::vector<std::string>& v, const std::string& s) {
    return static_cast<std::size_t>(std::find(v.begin(), v.end(), s) - v.begin());
  };

  Rng rng(derive_seed(cfg.seed, 2));
  Corpus corpus;
  corpus.feature_dims = cfg.feature_dims;
  corpus.split = cfg.split;

  for (int e = 0; e < cfg.n_examples; ++e) {
    QAExample ex;
    char qid[64];
    std::snprintf(qid, sizeof qid, "syn%llu-%05d", static_cast<unsigned long long>(cfg.seed), e);
    ex.qid = qid;

    // Cast: distinct persons with one behavior/emotion each for the clip.
    const int cast_size = static_cast<int>(
        rng.uniform_int(cfg.chars_per_frame.lo, std::min(cfg.chars_per_frame.hi, cfg.n_persons)));
    std::vector<std::string> shuffled = persons;
    rng.shuffle(std::span<std::string>(shuffled));
    std::vector<CastMember> cast;
    for (int c = 0; c < cast_size; ++c) {
      cast.push_back({shuffled[static_cast<std::size_t>(c)], rng.pick(behaviors), rng.pick(emotions)});
    }
    const auto target = static_cast<std::size_t>(rng.uniform_int(0, cast_size - 1));

    const int n_frames =
        static_cast<int>(rng.uniform_int(cfg.frames_per_clip.lo, cfg.frames_per_clip.hi));
    std::vector<std::vector<std::size_t>> frame_members;
    bool target_seen = false;
    for (int n = 0; n < n_frames; ++n) {
      const int k = static_cast<int>(
          rng.uniform_int(std::min(cfg.chars_per_frame.lo, cast_size),
                          std::min(cfg.chars_per_frame.hi, cast_size)));
      std::vector<std::size_t> idx(static_cast<std::size_t>(cast_size));
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
      rng.shuffle(std::span<std::size_t>(idx));
      idx.resize(static_cast<std::size_t>(k));
      target_seen = target_seen || std::find(idx.begin(), idx.end(), target) != idx.end();
      frame_members.push_back(std::move(idx));
    }
    if (!target_seen) {
      auto& f = frame_members[static_cast<std::size_t>(rng.uniform_int(0, n_frames - 1))];
      f[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(f.size()) - 1))] = target;
    }
    for (const auto& members : frame_members) {
      Frame f;
      f.frame_feature = random_vector(rng, cfg.feature_dims.video, 1.0);
      for (auto& x : f.frame_feature) x = quantize(x);
      for (auto m : members) {
        const auto& cm = cast[m];
        CharacterAnnotation c{{}, cm.person, cm.behavior, cm.emotion};
        const auto& pp = person_proto[index_of(persons, cm.person)];
        const auto& bp = behavior_proto[index_of(behaviors, cm.behavior)];
        const auto& ep = emotion_proto[index_of(emotions, cm.emotion)];
        c.box_feature.resize(static_cast<std::size_t>(cfg.feature_dims.bbox));
        for (std::size_t d = 0; d < c.box_feature.size(); ++d) {
          c.box_feature[d] = quantize(pp[d] + bp[d] + ep[d] + cfg.bbox_noise * rng.normal());
        }
        f.characters.push_back(std::move(c));
      }
      ex.frames.push_back(std::move(f));
    }

    // Speakers: the cast plus one bystander.
    std::vector<std::string> speakers;
    for (const auto& cm : cast) speakers.push_back(cm.person);
    speakers.push_back(shuffled[static_cast<std::size_t>(cast_size) % shuffled.size()]);

    const int n_subs =
        static_cast<int>(rng.uniform_int(cfg.subtitles_per_clip.lo, cfg.subtitles_per_clip.hi));
    const bool metadata_q = rng.uniform() < cfg.metadata_signal;
    const auto& who = cast[target];

    if (metadata_q) {
      for (int m = 0; m < n_subs; ++m) ex.subtitles.push_back(distractor(rng, speakers, "", -1));
      if (rng.bernoulli(0.5)) {
        ex.question = "what is " + who.person + " doing ?";
        ex.answer = who.person + " is " + who.behavior;
      } else {
        ex.question = "how does " + who.person + " feel ?";
        ex.answer = who.person + " feels " + who.emotion;
      }
    } else {
      const int kind = static_cast<int>(rng.uniform_int(0, 1));
      const auto key_at = rng.uniform_int(0, n_subs - 1);
      for (int m = 0; m < n_subs; ++m) {
        if (m == key_at) {
          if (kind == 0) {
            const auto& place = rng.pick(kPlaces);
            ex.subtitles.push_back({who.person, going_line(place)});
            ex.question = "where is " + who.person + " going ?";
            ex.answer = "to the " + place;
          } else {
            const auto& object = rng.pick(kObjects);
            ex.subtitles.push_back({who.person, wanting_line(object)});
            ex.question = "what does " + who.person + " want ?";
            ex.answer = "the " + object;
          }
        } else {
          ex.subtitles.push_back(distractor(rng, speakers, who.person, kind));
        }
      }
    }
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Statistics

void CorpusStats::Summary::add(double v) {
  if (count == 0) {
    min = max = v;
  } else {
    min = std::min(min, v);
    max = std::max(max, v);
  }
  sum += v;
  ++count;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  CorpusStats s;
  s.examples = corpus.examples.size();
  for (const auto& ex : corpus.examples) {
    if (is_metadata_question(ex)) ++s.metadata_questions;
    s.frames.add(static_cast<double>(ex.frames.size()));
    s.subtitles.add(static_cast<double>(ex.subtitles.size()));
    for (const auto& f : ex.frames) s.characters.add(static_cast<double>(f.characters.size()));
    for (const auto& sub : ex.subtitles)
      s.subtitle_words.add(static_cast<double>(normalize(sub.text).size()));
    s.question_words.add(static_cast<double>(normalize(ex.question).size()));
    s.answer_words.add(static_cast<double>(normalize(ex.answer).size()));
  }
  return s;
}

std::string format_stats(const CorpusStats& s) {
  std::ostringstream os;
  char line[160];
  const double frac =
      s.examples ? static_cast<double>(s.metadata_questions) / static_cast<double>(s.examples) : 0.0;
  std::snprintf(line, sizeof line, "examples %zu, metadata-answerable %zu (%.1f%%)\n", s.examples,
                s.metadata_questions, 100.0 * frac);
  os << line;
  auto row = [&](const char* name, const CorpusStats::Summary& v) {
    std::snprintf(line, sizeof line, "  %-28s mean %6.2f  min %4.0f  max %4.0f\n", name, v.mean(),
                  v.min, v.max);
    os << line;
  };
  row("N frames per clip", s.frames);
  row("I characters per frame", s.characters);
  row("M subtitles per clip", s.subtitles);
  row("J words per subtitle", s.subtitle_words);
  row("L question tokens", s.question_words);
  row("K answer tokens", s.answer_words);
  return os.str();
}

}  // namespace mvqa
