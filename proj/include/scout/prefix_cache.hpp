#pragma once

/**
 * Prefix-tree memoization of model evaluations.
 *
 * Repeated queries against one prompt walk the same output tree, so each
 * generated prefix is evaluated once and the result reused as a lookup
 * table. Raw logits are cached (not distributions) so any base/aux
 * temperature and top-k can be derived from one entry.
 *
 * Capacity is a bound on cached entries. When it is exceeded, whole
 * subtrees are evicted starting from the least recently visited one; evicted
 * entries are simply recomputed on the next visit, so eviction never changes
 * results. The root entry is never evicted.
 *
 * Single writer: one audit thread owns a cache at a time.
 */

#include "error.hpp"
#include "model.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

namespace scout {

struct CacheStats {
  std::uint64_t hits = 0;
  std::uint64_t misses = 0;
  std::uint64_t nodes = 1;  // root plus every non-root node holding an entry
  std::uint64_t bytes_estimate = 0;
  std::uint64_t evictions = 0;
};

class PrefixCache {
public:
  static constexpr std::size_t kDefaultCapacity = std::size_t{1} << 20;

  explicit PrefixCache(TokenSeq prompt = {}, std::size_t capacity = kDefaultCapacity)
      : prompt_(std::move(prompt)), capacity_(capacity) {
    if (capacity_ == 0) {
      throw Error(ErrorKind::InvalidParameter, "cache capacity must be positive");
    }
  }

  PrefixCache(const PrefixCache&) = delete;
  PrefixCache& operator=(const PrefixCache&) = delete;
  PrefixCache(PrefixCache&&) = default;
  PrefixCache& operator=(PrefixCache&&) = default;

  const TokenSeq& prompt() const noexcept { return prompt_; }

  /**
   * The stored evaluation for the query's prefix, computing it through the
   * source on first visit. The reference stays valid until the next call.
   */
  const StepOutcome& lookup_or_compute(ModelSource& source, const StepQuery& query) {
    if (!std::equal(query.prompt_tokens.begin(), query.prompt_tokens.end(), prompt_.begin(), prompt_.end())) {
      throw Error(ErrorKind::InvalidInput, "prefix cache is bound to a different prompt");
    }
    ++tick_;
    Node* node = &root_;
    node->last_visit = tick_;
    for (TokenId t : query.generated_prefix) {
      auto& slot = node->children[t];
      if (!slot) {
        slot = std::make_unique<Node>();
      }
      node = slot.get();
      node->last_visit = tick_;
    }

    if (node->entry) {
      ++stats_.hits;
      return *node->entry;
    }

    ++stats_.misses;
    node->entry = source.step(query);
    ++entries_;
    if (node != &root_) {
      ++stats_.nodes;
    }
    bytes_ += entry_bytes(*node->entry);

    if (entries_ > capacity_) {
      evict(node);
    }
    return *node->entry;
  }

  CacheStats stats() const {
    CacheStats s = stats_;
    s.bytes_estimate = bytes_ + trie_nodes() * sizeof(Node);
    return s;
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t entries() const noexcept { return entries_; }

private:
  struct Node {
    std::map<TokenId, std::unique_ptr<Node>> children;
    std::optional<StepOutcome> entry;
    std::uint64_t last_visit = 0;
  };

  static std::uint64_t entry_bytes(const StepOutcome& e) {
    return sizeof(StepOutcome) + e.logits.size() * sizeof(double);
  }

  std::uint64_t trie_nodes() const {
    std::uint64_t n = 0;
    std::vector<const Node*> stack{&root_};
    while (!stack.empty()) {
      const Node* cur = stack.back();
      stack.pop_back();
      ++n;
      for (const auto& [_, child] : cur->children) stack.push_back(child.get());
    }
    return n;
  }

  struct Victim {
    Node* parent = nullptr;
    TokenId token = 0;
    std::uint64_t last_visit = 0;
    std::size_t depth = 0;
  };

  // Oldest subtree not containing `keep`; shallower wins ties.
  std::optional<Victim> oldest_subtree(const Node* keep) const {
    std::optional<Victim> best;
    struct Frame {
      Node* node;
      std::size_t depth;
    };
    std::vector<Frame> stack{{const_cast<Node*>(&root_), 0}};
    while (!stack.empty()) {
      auto [node, depth] = stack.back();
      stack.pop_back();
      for (auto& [token, child] : node->children) {
        if (contains(child.get(), keep)) {
          stack.push_back({child.get(), depth + 1});
          continue;
        }
        const bool better = !best || child->last_visit < best->last_visit ||
                            (child->last_visit == best->last_visit && depth + 1 < best->depth);
        if (better) {
          best = Victim{node, token, child->last_visit, depth + 1};
        }
      }
    }
    return best;
  }

  static bool contains(const Node* subtree, const Node* target) {
    std::vector<const Node*> stack{subtree};
    while (!stack.empty()) {
      const Node* cur = stack.back();
      stack.pop_back();
      if (cur == target) return true;
      for (const auto& [_, child] : cur->children) stack.push_back(child.get());
    }
    return false;
  }

  void drop_subtree_counts(const Node& node) {
    if (node.entry) {
      --entries_;
      --stats_.nodes;
      bytes_ -= entry_bytes(*node.entry);
    }
    for (const auto& [_, child] : node.children) drop_subtree_counts(*child);
  }

  // Evict down to 7/8 of capacity so evictions are amortized.
  void evict(const Node* keep) {
    const std::size_t target = std::max<std::size_t>(1, capacity_ - capacity_ / 8);
    while (entries_ > target) {
      auto victim = oldest_subtree(keep);
      if (!victim) break;
      auto it = victim->parent->children.find(victim->token);
      drop_subtree_counts(*it->second);
      victim->parent->children.erase(it);
      ++stats_.evictions;
    }
  }

  TokenSeq prompt_;
  std::size_t capacity_;
  Node root_;
  std::uint64_t tick_ = 0;
  std::size_t entries_ = 0;
  std::uint64_t bytes_ = 0;
  CacheStats stats_;
};

} // namespace scout
