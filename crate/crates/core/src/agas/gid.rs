use std::fmt;

/// Global identity of an object in the address space.
///
/// Encoded on the wire as 16 big-endian bytes: home locality (4),
/// generation (4), sequence (8). The all-zero value is the null GID.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Gid {
    pub home_locality: u32,
    pub generation: u32,
    pub sequence: u64,
}

/// Generation reserved for the per-locality service address that system
/// parcels are sent to. Never handed out by [`GidAllocator`].
pub(crate) const SERVICE_GENERATION: u32 = u32::MAX;

impl Gid {
    pub const NULL: Gid = Gid {
        home_locality: 0,
        generation: 0,
        sequence: 0,
    };

    pub const fn new(home_locality: u32, generation: u32, sequence: u64) -> Self {
        Gid {
            home_locality,
            generation,
            sequence,
        }
    }

    pub fn is_null(&self) -> bool {
        *self == Gid::NULL
    }

    /// Address of the runtime services on `locality`.
    pub fn locality_service(locality: u32) -> Gid {
        Gid::new(locality, SERVICE_GENERATION, 0)
    }

    pub fn is_locality_service(&self) -> bool {
        self.generation == SERVICE_GENERATION
    }

    pub fn to_bytes(self) -> [u8; 16] {
        let mut out = [0u8; 16];
        out[..4].copy_from_slice(&self.home_locality.to_be_bytes());
        out[4..8].copy_from_slice(&self.generation.to_be_bytes());
        out[8..].copy_from_slice(&self.sequence.to_be_bytes());
        out
    }

    pub fn from_bytes(b: [u8; 16]) -> Self {
        Gid {
            home_locality: u32::from_be_bytes(b[..4].try_into().unwrap()),
            generation: u32::from_be_bytes(b[4..8].try_into().unwrap()),
            sequence: u64::from_be_bytes(b[8..].try_into().unwrap()),
        }
    }
}

impl fmt::Debug for Gid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Gid({}:{}:{})",
            self.home_locality, self.generation, self.sequence
        )
    }
}

impl fmt::Display for Gid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{{:08x}-{:08x}-{:016x}}}",
            self.home_locality, self.generation, self.sequence
        )
    }
}

/// Mints GIDs for one locality. Sequence numbers start at 1 and only grow,
/// so the null GID is never produced and no GID repeats within a run.
#[derive(Debug)]
pub(crate) struct GidAllocator {
    home_locality: u32,
    generation: u32,
    next: std::sync::atomic::AtomicU64,
}

impl GidAllocator {
    pub(crate) fn new(home_locality: u32, generation: u32) -> Self {
        assert_ne!(generation, SERVICE_GENERATION, "generation is reserved");
        GidAllocator {
            home_locality,
            generation,
            next: std::sync::atomic::AtomicU64::new(1),
        }
    }

    pub(crate) fn mint(&self) -> Gid {
        let seq = self
            .next
            .fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        Gid::new(self.home_locality, self.generation, seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout_is_big_endian() {
        let g = Gid::new(0x01020304, 0x05060708, 0x090a0b0c0d0e0f10);
        assert_eq!(
            g.to_bytes(),
            [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16]
        );
        assert_eq!(Gid::from_bytes(g.to_bytes()), g);
    }

    #[test]
    fn allocator_never_mints_null_and_increases() {
        let alloc = GidAllocator::new(0, 0);
        let a = alloc.mint();
        let b = alloc.mint();
        assert!(!a.is_null());
        assert!(b.sequence > a.sequence);
    }

    #[test]
    fn service_addresses_are_distinct_from_minted() {
        let alloc = GidAllocator::new(3, 1);
        let svc = Gid::locality_service(3);
        for _ in 0..100 {
            assert_ne!(alloc.mint(), svc);
        }
        assert!(svc.is_locality_service());
        assert!(!Gid::locality_service(0).is_null());
    }
}
