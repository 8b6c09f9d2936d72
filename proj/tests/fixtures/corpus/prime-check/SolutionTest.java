import static org.junit.jupiter.api.Assertions.*;
import org.junit.jupiter.api.Test;

class SolutionTest {
    @Test void smallNumbers() {
        assertFalse(Solution.isPrime(0));
        assertFalse(Solution.isPrime(1));
        assertTrue(Solution.isPrime(2));
        assertTrue(Solution.isPrime(3));
        assertFalse(Solution.isPrime(4));
    }
    @Test void squares() {
        assertFalse(Solution.isPrime(9));
        assertFalse(Solution.isPrime(49));
    }
    @Test void larger() {
        assertTrue(Solution.isPrime(97));
        assertFalse(Solution.isPrime(91));
    }
}
