#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace fedln {

enum class Direction { server_to_client, client_to_server };

enum class Payload {
  none,            // signal without data
  parameters,      // model weights
  sample_count,    // N_m
  noise_estimate,  // scalar n_hat
};

std::string to_string(Payload p);

/// One simulated exchange across the client/server boundary.
struct Message {
  int round = 0;
  Direction direction = Direction::server_to_client;
  int client_id = 0;
  Payload payload = Payload::none;
  std::size_t scalar_count = 0;

  friend bool operator==(const Message&, const Message&) = default;
};

/// Append-only log of boundary crossings. Not thread-safe; the engine
/// appends in client-id order after each barrier.
struct MessageTrace {
  std::vector<Message> messages;

  void record(const Message& m) { messages.push_back(m); }
};

}  // namespace fedln
