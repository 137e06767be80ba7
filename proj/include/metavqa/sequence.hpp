#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "metavqa/datamodel.hpp"
#include "metavqa/tokenizer.hpp"

namespace mvqa {

// Segment codes are stable: they index the segment embedding table.
enum class Segment : std::uint8_t {
  kVideo = 0,     // [V]
  kBoxFeature,    // [BBF]
  kPerson,        // [PER]
  kBehavior,      // [BEH]
  kEmotion,       // [EMO]
  kSpeaker,       // [SPK]
  kScript,        // [SCR]
  kQuestion,      // [QUE]
  kAnswer,        // [ANS]
};
inline constexpr int kNumSegments = 9;

std::string_view segment_name(Segment s);
// Vocabulary id of the matching segment token.
inline int segment_token_id(Segment s) { return special::kFirstSegment + static_cast<int>(s); }

enum class PayloadKind : std::uint8_t { kToken, kVideo, kBox };

struct Slot {
  PayloadKind kind = PayloadKind::kToken;
  int token = special::kPad;      // valid for kToken
  std::vector<double> feature;    // valid for kVideo / kBox
  Segment segment = Segment::kQuestion;
  int position = 0;

  static Slot make_token(int token, Segment seg, int pos) { return {PayloadKind::kToken, token, {}, seg, pos}; }
  bool operator==(const Slot&) const = default;
};

// S/V/B/M switches. Question and answer streams are always present.
struct ModalityMask {
  bool subtitles = true;
  bool video = true;
  bool bbox = true;
  bool metadata = true;

  static ModalityMask all() { return {}; }
  static ModalityMask subtitles_only() { return {true, false, false, false}; }
  // Accepts "S+M,V,B", "S,M" or "all"; letters are case-insensitive.
  static ModalityMask parse(std::string_view spec);
  // Ablation row label, e.g. "S+M,V".
  std::string label() const;
  // Compact key, e.g. "SVBM" with '-' for absent streams.
  std::string key() const;
  bool operator==(const ModalityMask&) const = default;
};

struct AssembledSequence {
  std::string qid;
  std::vector<Slot> slots;
  std::vector<std::uint8_t> loss_mask;
  std::vector<int> targets;  // -1 where loss_mask is false

  std::size_t size() const { return slots.size(); }
  std::size_t masked_count() const;
  // Appends a generated token with the answer segment and the next position.
  void append_answer_token(int token);
};

// Flat multimodal layout: per frame [V] then per character [BBF][PER][BEH][EMO];
// per subtitle [SPK] then [SCR]*J; then [QUE]*L; optionally [ANS]*K + EOS.
AssembledSequence assemble(const QAExample& ex, const Vocabulary& vocab, const ModalityMask& mask,
                           bool include_answer, int max_seq_len);

// N + sum I + M + sum J + L, each character counted once.
std::size_t paper_sequence_length(const QAExample& ex);

// Closed-form length of assemble(ex, mask, include_answer=false).
std::size_t expanded_length(const QAExample& ex, const ModalityMask& mask);

// Human-readable table: position, segment, payload summary.
std::string format_sequence(const AssembledSequence& seq, const Vocabulary& vocab);

}  // namespace mvqa
