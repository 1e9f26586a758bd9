//! Scoped flush-to-zero floating-point mode.
//!
//! Gradients carried back through long padded tails decay geometrically into
//! the subnormal range, where arithmetic is one to two orders of magnitude
//! slower. While a [`FlushDenormals`] guard is alive, the current thread
//! treats subnormal inputs and results as zero. Only x86_64 and aarch64
//! change modes; elsewhere the guard does nothing.

/// Enables flush-to-zero on the current thread until dropped.
pub struct FlushDenormals {
    #[cfg_attr(
        not(any(target_arch = "x86_64", target_arch = "aarch64")),
        allow(dead_code)
    )]
    saved: u64,
}

#[cfg(target_arch = "x86_64")]
mod imp {
    use std::arch::asm;

    // MXCSR bit 15 flushes results to zero, bit 6 treats inputs as zero.
    const FTZ_DAZ: u32 = (1 << 15) | (1 << 6);

    pub fn enter() -> u64 {
        let mut csr: u32 = 0;
        // SAFETY: stmxcsr/ldmxcsr only read and write the SSE control
        // register of this thread through a valid stack slot.
        unsafe {
            asm!("stmxcsr [{}]", in(reg) &mut csr, options(nostack));
            let new = csr | FTZ_DAZ;
            asm!("ldmxcsr [{}]", in(reg) &new, options(nostack));
        }
        u64::from(csr)
    }

    pub fn leave(saved: u64) {
        let csr = saved as u32;
        // SAFETY: restores the value read in `enter`.
        unsafe { asm!("ldmxcsr [{}]", in(reg) &csr, options(nostack)) };
    }
}

#[cfg(target_arch = "aarch64")]
mod imp {
    use std::arch::asm;

    // FPCR.FZ
    const FZ: u64 = 1 << 24;

    pub fn enter() -> u64 {
        let fpcr: u64;
        // SAFETY: reads and writes only the floating-point control register.
        unsafe {
            asm!("mrs {}, fpcr", out(reg) fpcr, options(nomem, nostack));
            asm!("msr fpcr, {}", in(reg) fpcr | FZ, options(nomem, nostack));
        }
        fpcr
    }

    pub fn leave(saved: u64) {
        // SAFETY: restores the value read in `enter`.
        unsafe { asm!("msr fpcr, {}", in(reg) saved, options(nomem, nostack)) };
    }
}

#[cfg(not(any(target_arch = "x86_64", target_arch = "aarch64")))]
mod imp {
    pub fn enter() -> u64 {
        0
    }

    pub fn leave(_: u64) {}
}

impl FlushDenormals {
    pub fn enable() -> Self {
        FlushDenormals {
            saved: imp::enter(),
        }
    }
}

impl Drop for FlushDenormals {
    fn drop(&mut self) {
        imp::leave(self.saved);
    }
}
