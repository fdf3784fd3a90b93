//! Address events, interlaced queue banks and the two event word formats.
//!
//! A feature map is cut into `K x K` windows. A spike at `(x, y)` is stored in
//! queue `kernel_pos = (y mod K) * K + (x mod K)` at window address
//! `(i_c, j_c) = (x / K, y / K)`, so the queue identity carries the position
//! inside the window and only the window address has to be stored.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueueError {
    #[error("coordinate ({x}, {y}) outside {width}x{height} map")]
    OutOfRange {
        x: usize,
        y: usize,
        width: usize,
        height: usize,
    },
    #[error("capacity fault: core {core} queue {queue} is full at depth {depth}")]
    CapacityFault { core: usize, queue: usize, depth: usize },
    #[error("queue {queue} of core {core} has no pending event in segment (channel {channel}, t {timestep})")]
    EmptyQueue {
        core: usize,
        queue: usize,
        channel: usize,
        timestep: usize,
    },
    #[error("no segment for channel {channel}, timestep {timestep}")]
    NoSegment { channel: usize, timestep: usize },
    #[error("word {word:#x} is not a valid {scheme:?} event")]
    InvalidWord { word: u32, scheme: EncodingScheme },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AddressEvent {
    pub kernel_pos: usize,
    pub i_c: usize,
    pub j_c: usize,
    pub channel: usize,
    pub timestep: usize,
}

pub fn window_count(extent: usize, k: usize) -> usize {
    extent.div_ceil(k)
}

/// Maps map coordinates to an address event.
pub fn to_address_event(
    x: usize,
    y: usize,
    k: usize,
    width: usize,
    height: usize,
    channel: usize,
    timestep: usize,
) -> Result<AddressEvent, QueueError> {
    if x >= width || y >= height {
        return Err(QueueError::OutOfRange { x, y, width, height });
    }
    Ok(AddressEvent {
        kernel_pos: (y % k) * k + x % k,
        i_c: x / k,
        j_c: y / k,
        channel,
        timestep,
    })
}

/// Inverse of [`to_address_event`]: returns `(x, y)`.
pub fn from_address_event(ev: &AddressEvent, k: usize) -> (usize, usize) {
    (ev.i_c * k + ev.kernel_pos % k, ev.j_c * k + ev.kernel_pos / k)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodingScheme {
    #[default]
    Plain,
    Compressed,
}

/// Bits per window coordinate: `ceil(log2(windows))`.
pub fn coord_bits(windows: usize) -> u32 {
    windows.max(1).next_power_of_two().trailing_zeros()
}

/// Bit patterns of one coordinate field that no window address uses.
pub fn spare_patterns(extent: usize, k: usize) -> usize {
    let windows = window_count(extent, k);
    (1usize << coord_bits(windows)) - windows
}

/// True when no spare pattern is left for status codes, so the compressed
/// format cannot be used.
pub fn check_fallback(extent: usize, k: usize) -> bool {
    let windows = window_count(extent, k) as i64;
    (1i64 << coord_bits(windows as usize)) - windows - 1 < 0
}

/// Out-of-band markers a queue word can carry instead of an event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Status {
    EndOfSegment,
    QueueFlush,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Decoded {
    Event { i_c: usize, j_c: usize },
    Status(Status),
}

/// Word format resolved for one feature map.
///
/// Plain words are `[status:2 | j_c:b | i_c:b]` with status 0 for events.
/// Compressed words are `[j_c:b | i_c:b]`; status words set `i_c` to the
/// all-ones pattern, which is never a legal window address, and put the
/// status code in `j_c`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventEncoding {
    pub scheme: EncodingScheme,
    pub bits_per_coord: u32,
    pub windows_x: usize,
    pub windows_y: usize,
    /// Compressed was requested but the map has no spare pattern.
    pub fell_back: bool,
}

impl EventEncoding {
    pub fn for_map(width: usize, height: usize, k: usize, requested: EncodingScheme) -> Self {
        let windows_x = window_count(width, k);
        let windows_y = window_count(height, k);
        let extent = width.max(height);
        let fallback = check_fallback(extent, k);
        let scheme = match requested {
            EncodingScheme::Compressed if fallback => EncodingScheme::Plain,
            s => s,
        };
        EventEncoding {
            scheme,
            bits_per_coord: coord_bits(windows_x.max(windows_y)),
            windows_x,
            windows_y,
            fell_back: requested == EncodingScheme::Compressed && fallback,
        }
    }

    pub fn word_bits(&self) -> u32 {
        match self.scheme {
            EncodingScheme::Plain => 2 * self.bits_per_coord + 2,
            EncodingScheme::Compressed => 2 * self.bits_per_coord,
        }
    }

    fn mask(&self) -> u32 {
        (1u32 << self.bits_per_coord) - 1
    }

    fn pack(&self, i_c: u32, j_c: u32) -> u32 {
        (j_c << self.bits_per_coord) | i_c
    }

    pub fn encode(&self, ev: &AddressEvent) -> Result<u32, QueueError> {
        if ev.i_c >= self.windows_x || ev.j_c >= self.windows_y {
            return Err(QueueError::OutOfRange {
                x: ev.i_c,
                y: ev.j_c,
                width: self.windows_x,
                height: self.windows_y,
            });
        }
        Ok(self.pack(ev.i_c as u32, ev.j_c as u32))
    }

    pub fn encode_status(&self, status: Status) -> u32 {
        let code = match status {
            Status::EndOfSegment => 1,
            Status::QueueFlush => 2,
        };
        match self.scheme {
            EncodingScheme::Plain => code << (2 * self.bits_per_coord),
            EncodingScheme::Compressed => self.pack(self.mask(), code - 1),
        }
    }

    pub fn decode(&self, word: u32) -> Result<Decoded, QueueError> {
        let invalid = QueueError::InvalidWord {
            word,
            scheme: self.scheme,
        };
        if word >> self.word_bits() != 0 {
            return Err(invalid);
        }
        let b = self.bits_per_coord;
        let i_c = word & self.mask();
        let j_c = (word >> b) & self.mask();
        match self.scheme {
            EncodingScheme::Plain => match word >> (2 * b) {
                0 => self.event(i_c, j_c).ok_or(invalid),
                1 if i_c == 0 && j_c == 0 => Ok(Decoded::Status(Status::EndOfSegment)),
                2 if i_c == 0 && j_c == 0 => Ok(Decoded::Status(Status::QueueFlush)),
                _ => Err(invalid),
            },
            EncodingScheme::Compressed if i_c == self.mask() && (i_c as usize) >= self.windows_x => match j_c {
                0 => Ok(Decoded::Status(Status::EndOfSegment)),
                1 => Ok(Decoded::Status(Status::QueueFlush)),
                _ => Err(invalid),
            },
            EncodingScheme::Compressed => self.event(i_c, j_c).ok_or(invalid),
        }
    }

    fn event(&self, i_c: u32, j_c: u32) -> Option<Decoded> {
        ((i_c as usize) < self.windows_x && (j_c as usize) < self.windows_y).then_some(Decoded::Event {
            i_c: i_c as usize,
            j_c: j_c as usize,
        })
    }
}

#[derive(Clone, Debug, Default)]
struct Segment {
    /// Slot indices into each physical queue, in FIFO order.
    slots: Vec<Vec<u32>>,
    heads: Vec<usize>,
    enqueued: usize,
}

/// `P` cores with `K^2` interlaced queues each. Every physical queue holds
/// at most `depth` event words in total across all segments.
///
/// Segments are keyed by `(channel, timestep)`. Events of a segment are dealt
/// round-robin over the cores in enqueue order.
#[derive(Clone, Debug)]
pub struct AeqBank {
    cores: usize,
    k: usize,
    channels: usize,
    timesteps: usize,
    depth: usize,
    encoding: EventEncoding,
    storage: Vec<Vec<u32>>,
    segments: Vec<Segment>,
}

impl AeqBank {
    /// `depth = None` leaves the queues unbounded.
    pub fn new(
        cores: usize,
        k: usize,
        channels: usize,
        timesteps: usize,
        depth: Option<usize>,
        encoding: EventEncoding,
    ) -> Self {
        assert!(cores >= 1 && k >= 1);
        let physical = cores * k * k;
        AeqBank {
            cores,
            k,
            channels,
            timesteps,
            depth: depth.unwrap_or(usize::MAX),
            encoding,
            storage: vec![Vec::new(); physical],
            segments: (0..channels * timesteps)
                .map(|_| Segment {
                    slots: vec![Vec::new(); physical],
                    heads: vec![0; physical],
                    enqueued: 0,
                })
                .collect(),
        }
    }

    pub fn cores(&self) -> usize {
        self.cores
    }

    pub fn queues_per_core(&self) -> usize {
        self.k * self.k
    }

    pub fn encoding(&self) -> &EventEncoding {
        &self.encoding
    }

    pub fn depth(&self) -> Option<usize> {
        (self.depth != usize::MAX).then_some(self.depth)
    }

    fn segment_index(&self, channel: usize, timestep: usize) -> Result<usize, QueueError> {
        if channel < self.channels && timestep < self.timesteps {
            Ok(channel * self.timesteps + timestep)
        } else {
            Err(QueueError::NoSegment { channel, timestep })
        }
    }

    pub fn enqueue(&mut self, ev: &AddressEvent) -> Result<(), QueueError> {
        let s = self.segment_index(ev.channel, ev.timestep)?;
        let word = self.encoding.encode(ev)?;
        let core = self.segments[s].enqueued % self.cores;
        let queue = ev.kernel_pos;
        let phys = core * self.queues_per_core() + queue;
        let store = &mut self.storage[phys];
        if store.len() >= self.depth {
            return Err(QueueError::CapacityFault {
                core,
                queue,
                depth: self.depth,
            });
        }
        store.push(word);
        let seg = &mut self.segments[s];
        seg.slots[phys].push((store.len() - 1) as u32);
        seg.enqueued += 1;
        Ok(())
    }

    pub fn dequeue(
        &mut self,
        core: usize,
        queue: usize,
        channel: usize,
        timestep: usize,
    ) -> Result<AddressEvent, QueueError> {
        let s = self.segment_index(channel, timestep)?;
        let empty = QueueError::EmptyQueue {
            core,
            queue,
            channel,
            timestep,
        };
        if core >= self.cores || queue >= self.queues_per_core() {
            return Err(empty);
        }
        let phys = core * self.queues_per_core() + queue;
        let seg = &mut self.segments[s];
        let Some(&slot) = seg.slots[phys].get(seg.heads[phys]) else {
            return Err(empty);
        };
        seg.heads[phys] += 1;
        match self.encoding.decode(self.storage[phys][slot as usize])? {
            Decoded::Event { i_c, j_c } => Ok(AddressEvent {
                kernel_pos: queue,
                i_c,
                j_c,
                channel,
                timestep,
            }),
            Decoded::Status(_) => Err(empty),
        }
    }

    /// Resets the read cursors of a segment so it can be drained again.
    pub fn rewind(&mut self, channel: usize, timestep: usize) -> Result<(), QueueError> {
        let s = self.segment_index(channel, timestep)?;
        self.segments[s].heads.iter_mut().for_each(|h| *h = 0);
        Ok(())
    }

    /// Events still unread in `(core, queue)` of a segment.
    pub fn pending(&self, core: usize, queue: usize, channel: usize, timestep: usize) -> usize {
        let Ok(s) = self.segment_index(channel, timestep) else {
            return 0;
        };
        let phys = core * self.queues_per_core() + queue;
        let seg = &self.segments[s];
        seg.slots[phys].len() - seg.heads[phys]
    }

    pub fn segment_len(&self, channel: usize, timestep: usize) -> usize {
        self.segment_index(channel, timestep)
            .map(|s| self.segments[s].enqueued)
            .unwrap_or(0)
    }

    /// Events of a segment held by each core.
    pub fn core_loads(&self, channel: usize, timestep: usize) -> Vec<usize> {
        let q = self.queues_per_core();
        let Ok(s) = self.segment_index(channel, timestep) else {
            return vec![0; self.cores];
        };
        let seg = &self.segments[s];
        (0..self.cores)
            .map(|c| (0..q).map(|i| seg.slots[c * q + i].len()).sum())
            .collect()
    }

    /// Largest per-core occupancy of each of the `K^2` queues within a segment.
    pub fn queue_occupancy(&self, channel: usize, timestep: usize) -> Vec<usize> {
        let q = self.queues_per_core();
        let Ok(s) = self.segment_index(channel, timestep) else {
            return vec![0; q];
        };
        let seg = &self.segments[s];
        (0..q)
            .map(|i| (0..self.cores).map(|c| seg.slots[c * q + i].len()).max().unwrap_or(0))
            .collect()
    }

    /// Highest fill level over all physical queues.
    pub fn peak_fill(&self) -> usize {
        self.storage.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn total_events(&self) -> usize {
        self.storage.iter().map(Vec::len).sum()
    }
}
