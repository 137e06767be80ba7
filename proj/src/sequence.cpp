#include "metavqa/sequence.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include "metavqa/error.hpp"

namespace mvqa {

std::string_view segment_name(Segment s) {
  static constexpr std::array<std::string_view, kNumSegments> kNames = {
      "V", "BBF", "PER", "BEH", "EMO", "SPK", "SCR", "QUE", "ANS"};
  return kNames[static_cast<std::size_t>(s)];
}

ModalityMask ModalityMask::parse(std::string_view spec) {
  std::string s;
  for (char c : spec) {
    if (!std::isspace(static_cast<unsigned char>(c))) s.push_back(static_cast<char>(std::toupper(c)));
  }
  if (s == "ALL") return all();
  if (s.empty()) throw UsageError("empty modality list");
  ModalityMask m{false, false, false, false};
  for (char c : s) {
    switch (c) {
      case 'S': m.subtitles = true; break;
      case 'V': m.video = true; break;
      case 'B': m.bbox = true; break;
      case 'M': m.metadata = true; break;
      case '+':
      case ',': break;
      default: throw UsageError("unknown modality '" + std::string(1, c) + "' in '" + std::string(spec) + "'");
    }
  }
  return m;
}

std::string ModalityMask::label() const {
  // Base stream, then "+M", then ",V" / ",B".
  std::string out = subtitles ? "S" : "";
  std::vector<std::string> extra;
  if (metadata) extra.emplace_back("M");
  if (video) extra.emplace_back("V");
  if (bbox) extra.emplace_back("B");
  for (std::size_t i = 0; i < extra.size(); ++i) {
    if (i == 0) {
      out += out.empty() ? extra[i] : "+" + extra[i];
    } else {
      out += "," + extra[i];
    }
  }
  return out.empty() ? "Q" : out;
}

std::string ModalityMask::key() const {
  return std::string{subtitles ? 'S' : '-', video ? 'V' : '-', bbox ? 'B' : '-', metadata ? 'M' : '-'};
}

std::size_t AssembledSequence::masked_count() const {
  return static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), std::uint8_t{1}));
}

void AssembledSequence::append_answer_token(int token) {
  slots.push_back(Slot::make_token(token, Segment::kAnswer, static_cast<int>(slots.size())));
  loss_mask.push_back(0);
  targets.push_back(-1);
}

namespace {

int label_id(const Vocabulary& vocab, const std::string& label, const std::string& qid) {
  auto toks = normalize(label);
  if (toks.size() != 1) {
    throw DataError("qid " + qid + ": metadata label '" + label + "' is not a single token");
  }
  if (!vocab.contains(toks.front())) {
    throw DataError("qid " + qid + ": metadata label '" + label + "' missing from vocabulary");
  }
  return vocab.id(toks.front());
}

}  // namespace

AssembledSequence assemble(const QAExample& ex, const Vocabulary& vocab, const ModalityMask& mask,
                           bool include_answer, int max_seq_len) {
  AssembledSequence seq;
  seq.qid = ex.qid;
  auto& slots = seq.slots;
  auto push_token = [&](int token, Segment seg) {
    slots.push_back(Slot::make_token(token, seg, static_cast<int>(slots.size())));
  };
  auto push_feature = [&](PayloadKind kind, const std::vector<double>& v, Segment seg) {
    slots.push_back({kind, special::kPad, v, seg, static_cast<int>(slots.size())});
  };

  for (const auto& frame : ex.frames) {
    if (mask.video) push_feature(PayloadKind::kVideo, frame.frame_feature, Segment::kVideo);
    for (const auto& c : frame.characters) {
      if (mask.bbox) push_feature(PayloadKind::kBox, c.box_feature, Segment::kBoxFeature);
      if (mask.metadata) {
        push_token(label_id(vocab, c.person, ex.qid), Segment::kPerson);
        push_token(label_id(vocab, c.behavior, ex.qid), Segment::kBehavior);
        push_token(label_id(vocab, c.emotion, ex.qid), Segment::kEmotion);
      }
    }
  }
  if (mask.subtitles) {
    for (const auto& sub : ex.subtitles) {
      push_token(label_id(vocab, sub.speaker, ex.qid), Segment::kSpeaker);
      for (int id : vocab.encode(sub.text)) push_token(id, Segment::kScript);
    }
  }
  for (int id : vocab.encode(ex.question)) push_token(id, Segment::kQuestion);

  const std::size_t context_len = slots.size();
  seq.loss_mask.assign(context_len, 0);
  seq.targets.assign(context_len, -1);

  if (include_answer) {
    if (context_len == 0) throw DataError("qid " + ex.qid + ": empty context, nothing to condition the answer on");
    auto answer = vocab.encode(ex.answer);
    answer.push_back(special::kEos);
    for (int id : answer) {
      // The slot before each answer token predicts it.
      seq.loss_mask.back() = 1;
      seq.targets.back() = id;
      push_token(id, Segment::kAnswer);
      seq.loss_mask.push_back(0);
      seq.targets.push_back(-1);
    }
  }
  if (static_cast<int>(slots.size()) > max_seq_len) {
    throw OverflowError("qid " + ex.qid + ": assembled length " + std::to_string(slots.size()) +
                        " exceeds max_seq_len " + std::to_string(max_seq_len));
  }
  return seq;
}

std::size_t paper_sequence_length(const QAExample& ex) {
  std::size_t n = ex.frames.size() + ex.subtitles.size();
  for (const auto& f : ex.frames) n += f.characters.size();
  for (const auto& s : ex.subtitles) n += normalize(s.text).size();
  return n + normalize(ex.question).size();
}

std::size_t expanded_length(const QAExample& ex, const ModalityMask& mask) {
  std::size_t n = 0;
  const std::size_t per_char = (mask.bbox ? 1 : 0) + (mask.metadata ? 3 : 0);
  for (const auto& f : ex.frames) n += (mask.video ? 1 : 0) + f.characters.size() * per_char;
  if (mask.subtitles) {
    for (const auto& s : ex.subtitles) n += 1 + normalize(s.text).size();
  }
  return n + normalize(ex.question).size();
}

std::string format_sequence(const AssembledSequence& seq, const Vocabulary& vocab) {
  std::ostringstream os;
  os << "qid " << seq.qid << ", " << seq.size() << " slots\n";
  os << " pos  seg  loss  payload\n";
  char buf[64];
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const auto& s = seq.slots[t];
    std::snprintf(buf, sizeof buf, "%4d  %-4s %4s  ", s.position, std::string(segment_name(s.segment)).c_str(),
                  seq.loss_mask[t] ? "*" : "");
    os << buf;
    if (s.kind == PayloadKind::kToken) {
      os << vocab.token(s.token);
      if (seq.loss_mask[t]) os << "  -> " << vocab.token(seq.targets[t]);
    } else {
      const double norm = std::sqrt(std::inner_product(s.feature.begin(), s.feature.end(), s.feature.begin(), 0.0));
      std::snprintf(buf, sizeof buf, "%s[%zu] |x|=%.3f", s.kind == PayloadKind::kVideo ? "video" : "bbox",
                    s.feature.size(), norm);
      os << buf;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace mvqa
